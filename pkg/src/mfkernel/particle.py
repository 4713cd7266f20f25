"""Forward and adjoint particle simulations on a shared time grid.

Forward systems use explicit Euler; adjoints are integrated by reverse-time
explicit stepping with the couplings evaluated at the stored forward state of
the step being computed.  For the interacting system this reverse recursion
is the exact discrete adjoint of the forward Euler update; the O(dt)
consistency error of the assembled gradients comes only from the left-endpoint
time quadrature downstream.

State conventions follow the kernels module: trajectories are (M+1, N) arrays
in 1D and (M+1, N, d) in d >= 2.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from . import _pairops
from .errors import DivergenceError
from .kernels import PAIR_EXP_POLY_1D, PAIR_GAUSS_SUM, InteractionKernel, VelocityField
from .sampling import ParticleEnsemble


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid on [0, T] with M steps of size dt; M*dt = T to 1e-12."""

    t_end: float
    dt: float
    n_steps: int

    def __post_init__(self):
        if self.dt <= 0 or self.n_steps < 1:
            raise ValueError("need dt > 0 and at least one step")
        if abs(self.n_steps * self.dt - self.t_end) > 1e-12 * max(1.0, abs(self.t_end)):
            raise ValueError(
                f"n_steps*dt = {self.n_steps * self.dt!r} does not reach t_end = {self.t_end!r}"
            )

    @classmethod
    def from_dt(cls, t_end: float, dt: float) -> "TimeGrid":
        m = int(round(t_end / dt))
        return cls(t_end=t_end, dt=dt, n_steps=m)

    @classmethod
    def from_steps(cls, t_end: float, n_steps: int) -> "TimeGrid":
        return cls(t_end=t_end, dt=t_end / n_steps, n_steps=n_steps)

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.n_steps + 1) * self.dt


@dataclass(frozen=True)
class ParticleTrajectory:
    grid: TimeGrid
    states: np.ndarray  # (M+1, N) or (M+1, N, d)

    @property
    def dim(self) -> int:
        return 1 if self.states.ndim == 2 else self.states.shape[2]

    @property
    def count(self) -> int:
        return self.states.shape[1]


@dataclass(frozen=True)
class AdjointTrajectory:
    grid: TimeGrid
    states: np.ndarray


def _positions(x0) -> np.ndarray:
    if isinstance(x0, ParticleEnsemble):
        return np.asarray(x0.positions, dtype=float)
    return np.asarray(x0, dtype=float)


def _check_finite_step(arr, k):
    if not np.all(np.isfinite(arr)):
        raise DivergenceError(f"non-finite particle state at step {k}")


# ---------------------------------------------------------------------------
# interacting system  dX_i/dt = (1/N) sum_{j != i} w(X_i - X_j)
# ---------------------------------------------------------------------------

def _pair_forces_generic(kernel, x):
    """(1/N) sum_{j != i} w(x_i - x_j) via full pairwise evaluation."""
    n = x.shape[0]
    if x.ndim == 1:
        diffs = x[:, None] - x[None, :]
        w = np.asarray(kernel.eval(diffs))
        np.fill_diagonal(w, 0.0)
        return w.sum(axis=1) / n
    diffs = x[:, None, :] - x[None, :, :]
    w = np.asarray(kernel.eval(diffs))
    w[np.arange(n), np.arange(n)] = 0.0
    return w.sum(axis=1) / n


def forward_interacting(kernel: InteractionKernel, x0, grid: TimeGrid) -> ParticleTrajectory:
    """Euler trajectory of the pairwise-interacting system, full history stored."""
    pos = _positions(x0)
    dim = 1 if pos.ndim == 1 else pos.shape[1]
    if kernel.dim != dim:
        raise ValueError(f"kernel dimension {kernel.dim} != ensemble dimension {dim}")
    desc = kernel.pair_descriptor()
    if desc is not None:
        kind, params, poly = desc
        cs, ce = _pairops.chunk_bounds(pos.shape[0])
        if dim == 1:
            states, bad = _pairops.forward_1d(pos, grid.n_steps, grid.dt, kind, params, poly, cs, ce)
        else:
            if kind != PAIR_GAUSS_SUM:
                raise ValueError("2D fast path supports Gaussian-sum kernels only")
            states, bad = _pairops.forward_2d(pos, grid.n_steps, grid.dt, kind, params, poly, cs, ce)
        if bad >= 0:
            raise DivergenceError(f"non-finite particle state at step {bad}")
        return ParticleTrajectory(grid=grid, states=states)
    shape = (grid.n_steps + 1,) + pos.shape
    states = np.empty(shape)
    states[0] = pos
    for k in range(grid.n_steps):
        states[k + 1] = states[k] + grid.dt * _pair_forces_generic(kernel, states[k])
        _check_finite_step(states[k + 1], k + 1)
    return ParticleTrajectory(grid=grid, states=states)


def adjoint_interacting(kernel: InteractionKernel, traj: ParticleTrajectory,
                        y_term) -> AdjointTrajectory:
    """Reverse-time adjoint of the interacting system from terminal data y_term."""
    y_term = np.asarray(y_term, dtype=float)
    if y_term.shape != traj.states.shape[1:]:
        raise ValueError(f"terminal data shape {y_term.shape} != state shape {traj.states.shape[1:]}")
    if not np.all(np.isfinite(y_term)):
        raise DivergenceError("non-finite adjoint terminal data")
    desc = kernel.pair_descriptor()
    grid = traj.grid
    if desc is not None:
        kind, params, poly = desc
        cs, ce = _pairops.chunk_bounds(traj.states.shape[1])
        if traj.dim == 1:
            ys = _pairops.adjoint_1d(traj.states, y_term, grid.dt, kind, params, poly, cs, ce)
        else:
            ys = _pairops.adjoint_2d(traj.states, y_term, grid.dt, kind, params, poly, cs, ce)
        _check_finite_step(ys[0], 0)
        return AdjointTrajectory(grid=grid, states=ys)
    n = traj.states.shape[1]
    ys = np.empty_like(traj.states)
    ys[grid.n_steps] = y_term
    for k in range(grid.n_steps - 1, -1, -1):
        xk = traj.states[k]
        yk1 = ys[k + 1]
        if traj.dim == 1:
            jmat = np.asarray(kernel.jacobian(xk[:, None] - xk[None, :]))
            np.fill_diagonal(jmat, 0.0)
            coupling = jmat.sum(axis=1) * yk1 - jmat.T @ yk1
        else:
            diffs = xk[:, None, :] - xk[None, :, :]
            jac = np.asarray(kernel.jacobian(diffs))  # (N, N, d, d), J[i,j] at x_i - x_j
            jac[np.arange(n), np.arange(n)] = 0.0
            # row term: (sum_j J(d_ij))^T y_i ; column term: sum_j J(d_ji)^T y_j
            row = np.einsum("ijab,ia->ib", jac, yk1)
            col = np.einsum("jiab,ja->ib", jac, yk1)
            coupling = row - col
        ys[k] = yk1 + grid.dt * coupling / n
        _check_finite_step(ys[k], k)
    return AdjointTrajectory(grid=grid, states=ys)


# ---------------------------------------------------------------------------
# independent characteristics  dX/dt = a(X)
# ---------------------------------------------------------------------------

def forward_characteristics(field: VelocityField, x0, grid: TimeGrid) -> ParticleTrajectory:
    pos = _positions(x0)
    shape = (grid.n_steps + 1,) + pos.shape
    states = np.empty(shape)
    states[0] = pos
    for k in range(grid.n_steps):
        states[k + 1] = states[k] + grid.dt * np.asarray(field.eval(states[k]))
        _check_finite_step(states[k + 1], k + 1)
    return ParticleTrajectory(grid=grid, states=states)


def adjoint_characteristics(field: VelocityField, traj: ParticleTrajectory,
                            y_term) -> AdjointTrajectory:
    """Reverse-time solve of dY/dt + grad a(X(t))^T Y = 0 along stored characteristics."""
    y_term = np.asarray(y_term, dtype=float)
    if y_term.shape != traj.states.shape[1:]:
        raise ValueError("terminal data shape mismatch")
    grid = traj.grid
    ys = np.empty_like(traj.states)
    ys[grid.n_steps] = y_term
    for k in range(grid.n_steps - 1, -1, -1):
        jac = np.asarray(field.jacobian(traj.states[k]))
        yk1 = ys[k + 1]
        if traj.dim == 1:
            ys[k] = yk1 + grid.dt * jac * yk1
        else:
            ys[k] = yk1 + grid.dt * np.einsum("nab,na->nb", jac, yk1)
        _check_finite_step(ys[k], k)
    return AdjointTrajectory(grid=grid, states=ys)


# ---------------------------------------------------------------------------
# terminal conditions for the adjoint
# ---------------------------------------------------------------------------

def terminal_gradient(measurement, traj: ParticleTrajectory) -> np.ndarray:
    """grad nu evaluated at every terminal particle position."""
    return np.asarray(measurement.gradient(traj.states[-1]))


def mismatch_terminal_gradient(measurement, traj: ParticleTrajectory,
                               d_star: float) -> np.ndarray:
    """Terminal adjoint data for the squared-mismatch objective.

    Returns grad nu(X_i(T)) scaled by the scalar residual
    mean_i nu(X_i(T)) - d_star.
    """
    if not np.isfinite(d_star):
        raise ValueError("d_star must be finite")
    xt = traj.states[-1]
    residual = float(np.mean(np.asarray(measurement.eval(xt)))) - float(d_star)
    return np.asarray(measurement.gradient(xt)) * residual


# ---------------------------------------------------------------------------
# binary trajectory dump: header {M, N, d} as little-endian u64, then states
# in (step, particle, coordinate) order as little-endian f64
# ---------------------------------------------------------------------------

def save_states(path, states: np.ndarray) -> None:
    states = np.asarray(states, dtype=float)
    m = states.shape[0] - 1
    n = states.shape[1]
    d = 1 if states.ndim == 2 else states.shape[2]
    with open(path, "wb") as fh:
        fh.write(struct.pack("<3Q", m, n, d))
        fh.write(states.astype("<f8").tobytes(order="C"))


def load_states(path) -> np.ndarray:
    with open(path, "rb") as fh:
        m, n, d = struct.unpack("<3Q", fh.read(24))
        data = np.frombuffer(fh.read(), dtype="<f8")
    if data.size != (m + 1) * n * d:
        raise ValueError("trajectory file payload does not match its header")
    shape = (m + 1, n) if d == 1 else (m + 1, n, d)
    return data.reshape(shape).astype(float)
