"""Data-mismatch objective and gradient-descent kernel reconstruction.

Synthetic data comes from the mean-field PDE with the ground-truth kernel;
the inversion runs at the particle level: forward simulation, adjoint with
the residual-scaled terminal condition, basis-projected gradient, Armijo
backtracking.  The initial particle draw is fixed across iterations, so a
run is a deterministic function of its seed.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np

from .gradients import project_gradient, symmetric_axis
from .kernels import BasisSet, InteractionKernel, assemble_param_kernel
from .meanfield import DensityField, density_from_spec, measure, solve_forward_meanfield
from .particle import (ParticleTrajectory, TimeGrid, adjoint_interacting,
                       forward_interacting, mismatch_terminal_gradient)
from .sampling import DensitySpec, ParticleEnsemble, rejection_sample


# ---------------------------------------------------------------------------
# measurement functions nu with analytic gradients
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MeasurementSpec:
    """Scalar observable nu with analytic gradient."""

    family: str
    amp: float = 1.0
    width: float = 1.0

    def eval(self, x):
        x = np.asarray(x, dtype=float)
        if self.family == "constant":
            return np.full(x.shape if x.ndim <= 1 else x.shape[:-1], self.amp)
        if self.family == "half-square-norm":
            q = x * x if x.ndim <= 1 else np.sum(x * x, axis=-1)
            return 0.5 * self.amp * q
        if self.family == "gaussian":
            q = x * x if x.ndim <= 1 else np.sum(x * x, axis=-1)
            return self.amp * np.exp(-q / (2.0 * self.width**2))
        raise ValueError(f"unknown measurement family {self.family!r}")

    def gradient(self, x):
        x = np.asarray(x, dtype=float)
        if self.family == "constant":
            return np.zeros_like(x)
        if self.family == "half-square-norm":
            return self.amp * x
        if self.family == "gaussian":
            return -x / self.width**2 * self.eval(x)[..., None] if x.ndim > 1 \
                else -x / self.width**2 * self.eval(x)
        raise ValueError(f"unknown measurement family {self.family!r}")


def gaussian_measurement_unit() -> MeasurementSpec:
    """nu(x) = (2 pi)^{-1/2} exp(-x^2/2)."""
    return MeasurementSpec(family="gaussian", amp=1.0 / np.sqrt(2.0 * np.pi), width=1.0)


def gaussian_measurement_narrow() -> MeasurementSpec:
    """nu(x) = (0.1 pi)^{-1/2} exp(-10 x^2)."""
    return MeasurementSpec(family="gaussian", amp=1.0 / np.sqrt(0.1 * np.pi),
                           width=np.sqrt(0.05))


def second_moment_measurement() -> MeasurementSpec:
    """nu(x) = |x|^2 / 2."""
    return MeasurementSpec(family="half-square-norm")


# ---------------------------------------------------------------------------
# problem definition and synthetic data
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class InverseProblem:
    basis: BasisSet
    f0: DensitySpec
    measurements: tuple[MeasurementSpec, ...]
    time_grid: TimeGrid
    n_particles: int
    d_star: tuple[float, ...]
    seed: int = 0

    def __post_init__(self):
        if len(self.d_star) != len(self.measurements):
            raise ValueError("one datum per measurement function is required")
        if not all(np.isfinite(self.d_star)):
            raise ValueError("data must be finite")


def generate_data(true_kernel: InteractionKernel, f0_field: DensityField,
                  measurements, time_grid: TimeGrid) -> tuple[float, ...]:
    """Terminal-time measurements of the mean-field solution under the truth."""
    if isinstance(measurements, MeasurementSpec):
        measurements = (measurements,)
    history = solve_forward_meanfield(true_kernel, f0_field, time_grid)
    final = DensityField(grid=f0_field.grid, values=history.snapshots[-1],
                         time=time_grid.t_end)
    return tuple(measure(m, final) for m in measurements)


def draw_ensemble(problem: InverseProblem) -> ParticleEnsemble:
    return rejection_sample(problem.f0, problem.n_particles, problem.seed)


def objective(problem: InverseProblem, coeffs, ensemble: ParticleEnsemble):
    """J = (1/2) sum_m (mean_i nu_m(X_i(T)) - d*_m)^2 plus the trajectory."""
    kernel = assemble_param_kernel(problem.basis, coeffs)
    traj = forward_interacting(kernel, ensemble, problem.time_grid)
    xt = traj.states[-1]
    j = 0.0
    for m, d in zip(problem.measurements, problem.d_star):
        rho = float(np.mean(np.asarray(m.eval(xt)))) - d
        j += 0.5 * rho * rho
    return j, traj


_FUSED_CACHE_LIMIT = 3 * 10**7  # cached pair exponentials (doubles)


def _mismatch_terminal(problem, traj):
    y_term = None
    for m, d in zip(problem.measurements, problem.d_star):
        term = mismatch_terminal_gradient(m, traj, d)
        y_term = term if y_term is None else y_term + term
    return y_term


def coefficient_gradient(problem: InverseProblem, coeffs,
                         traj: ParticleTrajectory) -> np.ndarray:
    """Adjoint gradient of the objective with respect to the coefficients.

    Equals project_gradient(traj, adjoint_interacting(...), basis); built-in
    basis families use a fused backward sweep that shares the per-pair
    exponentials between the adjoint couplings and the projection.
    """
    from . import _pairops

    kernel = assemble_param_kernel(problem.basis, coeffs)
    y_term = _mismatch_terminal(problem, traj)
    basis = problem.basis
    n = traj.states.shape[1]
    npairs = n * (n - 1) // 2
    desc = kernel.pair_descriptor()
    if desc is not None and npairs * max(1, basis.count) <= _FUSED_CACHE_LIMIT:
        cs, ce = _pairops.chunk_bounds(n)
        base = _pairops.pair_base(n)
        if basis.family == "laguerre1d":
            from .kernels import _laguerre_poly_coeffs

            kind, params, kpoly = desc
            bpolys = np.zeros((basis.count, basis.count))
            for l in range(1, basis.count + 1):
                pc = _laguerre_poly_coeffs(l)
                bpolys[l - 1, : pc.size] = pc
            _, grad = _pairops.adjoint_project_poly_1d(
                traj.states, y_term, traj.grid.dt, kind, params, kpoly,
                bpolys, cs, ce, base)
            return grad
        if basis.family == "gaussgrad2d":
            import math as _math

            kamps = np.asarray(coeffs, dtype=float)
            bparams = np.empty((basis.count, 2))
            for idx, t in enumerate(basis.thetas, start=1):
                bparams[idx - 1, 0] = (-1.0) ** idx / (2.0 * _math.pi * t * t)
                bparams[idx - 1, 1] = t
            _, grad = _pairops.adjoint_project_gauss_2d(
                traj.states, y_term, traj.grid.dt, kamps, bparams, cs, ce, base)
            return grad
    adjoint = adjoint_interacting(kernel, traj, y_term)
    return project_gradient(traj, adjoint, basis)


# ---------------------------------------------------------------------------
# Armijo backtracking line search
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LineSearchParams:
    """Armijo backtracking constants.

    mode "global" searches a single step size for the whole gradient;
    "coordinate" first searches one step size per coefficient (accepting the
    largest individually sufficient step, which equalizes badly scaled
    coordinates), then shrinks a common multiplier until the combined update
    satisfies the summed Armijo condition.
    """

    tau0: float = 1.0
    shrink: float = 0.5
    armijo: float = 1e-4
    max_backtracks: int = 40
    mode: str = "global"

    def __post_init__(self):
        if not (0.0 < self.shrink < 1.0 and 0.0 < self.armijo < 1.0):
            raise ValueError("shrink and armijo constants must lie in (0, 1)")
        if self.mode not in ("global", "coordinate"):
            raise ValueError(f"unknown line search mode {self.mode!r}")


@dataclass(frozen=True)
class LineSearchResult:
    tau: float
    coeffs: np.ndarray
    objective: float
    payload: object
    backtracks: int
    stalled: bool


def backtracking_step(j_current: float, coeffs, grad, evaluate,
                      params: LineSearchParams = LineSearchParams()) -> LineSearchResult:
    """Largest tau = tau0 * shrink^m satisfying the Armijo decrease condition.

    `evaluate` maps coefficients to (J, payload); the payload of the accepted
    point is returned so callers can reuse the trajectory.
    """
    coeffs = np.asarray(coeffs, dtype=float)
    grad = np.asarray(grad, dtype=float)
    gg = float(grad @ grad)
    if gg == 0.0:
        raise ValueError("line search requires a nonzero gradient")
    tau = params.tau0
    for m in range(params.max_backtracks + 1):
        trial = coeffs - tau * grad
        j_trial, payload = evaluate(trial)
        if j_trial <= j_current - params.armijo * tau * gg:
            return LineSearchResult(tau=tau, coeffs=trial, objective=j_trial,
                                    payload=payload, backtracks=m, stalled=False)
        tau *= params.shrink
    return LineSearchResult(tau=0.0, coeffs=coeffs, objective=j_current,
                            payload=None, backtracks=params.max_backtracks + 1,
                            stalled=True)


def coordinate_backtracking_step(j_current: float, coeffs, grad, evaluate,
                                 params: LineSearchParams,
                                 warm_taus=None) -> tuple[LineSearchResult, np.ndarray]:
    """Per-coordinate Armijo searches followed by a common safeguard multiplier.

    Each coordinate accepts the largest tau with
    J(a - tau g_l e_l) <= J - c tau g_l^2, warm-started from the previous
    acceptance; the combined update is scaled down until
    J(a - s tau.g) <= J - c s sum_l tau_l g_l^2.  Returns the accepted point
    and the per-coordinate steps for warm starting the next iteration.
    """
    coeffs = np.asarray(coeffs, dtype=float)
    grad = np.asarray(grad, dtype=float)
    if not np.any(grad):
        raise ValueError("line search requires a nonzero gradient")
    n = coeffs.size
    trials = 0
    if warm_taus is not None and np.any(warm_taus > 0.0):
        # fast path: retry the previously accepted per-coordinate steps
        taus = np.where(grad != 0.0, warm_taus, 0.0)
        decrease = float(np.sum(taus * grad * grad))
        trial = coeffs - taus * grad
        j_trial, payload = evaluate(trial)
        trials += 1
        if decrease > 0.0 and j_trial <= j_current - params.armijo * decrease:
            return (LineSearchResult(tau=1.0, coeffs=trial, objective=j_trial,
                                     payload=payload, backtracks=trials,
                                     stalled=False), taus)
    taus = np.zeros(n)
    for l in range(n):
        if grad[l] == 0.0:
            continue
        tau = params.tau0
        if warm_taus is not None and warm_taus[l] > 0.0:
            tau = min(params.tau0, warm_taus[l] / params.shrink ** 2)
        for _ in range(params.max_backtracks + 1):
            trial = coeffs.copy()
            trial[l] -= tau * grad[l]
            j_trial, _ = evaluate(trial)
            trials += 1
            if j_trial <= j_current - params.armijo * tau * grad[l] ** 2:
                taus[l] = tau
                break
            tau *= params.shrink
    decrease = float(np.sum(taus * grad * grad))
    if decrease > 0.0:
        scale = 1.0
        for _ in range(params.max_backtracks + 1):
            trial = coeffs - scale * taus * grad
            j_trial, payload = evaluate(trial)
            trials += 1
            if j_trial <= j_current - params.armijo * scale * decrease:
                return (LineSearchResult(tau=scale, coeffs=trial, objective=j_trial,
                                         payload=payload, backtracks=trials,
                                         stalled=False), scale * taus)
            scale *= params.shrink
    return (LineSearchResult(tau=0.0, coeffs=coeffs, objective=j_current,
                             payload=None, backtracks=trials, stalled=True),
            taus)


# ---------------------------------------------------------------------------
# reconstruction driver (gradient descent)
# ---------------------------------------------------------------------------

def default_error_axes(dim: int):
    if dim == 1:
        return (np.linspace(-6.0, 6.0, 1201),)
    ax = np.linspace(-2.0, 2.0, 161)
    return (ax, ax)


def kernel_error(kernel: InteractionKernel, truth: InteractionKernel, axes) -> float:
    """Relative l-infinity error of the kernel against the truth on fixed nodes."""
    if kernel.dim == 1:
        a = np.asarray(kernel.eval(axes[0]))
        b = np.asarray(truth.eval(axes[0]))
    else:
        g1, g2 = np.meshgrid(axes[0], axes[1], indexing="ij")
        pts = np.stack([g1, g2], axis=-1)
        a = np.asarray(kernel.eval(pts))
        b = np.asarray(truth.eval(pts))
    return float(np.max(np.abs(a - b)) / np.max(np.abs(b)))


@dataclass
class ReconstructionHistory:
    iterations: list[int] = field(default_factory=list)
    coeffs: list[np.ndarray] = field(default_factory=list)
    objective: list[float] = field(default_factory=list)
    step_size: list[float] = field(default_factory=list)
    backtracks: list[int] = field(default_factory=list)
    kernel_err: list[float] = field(default_factory=list)
    stalled: bool = False
    converged: bool = False

    def record(self, k, a, j, tau, m, err):
        self.iterations.append(k)
        self.coeffs.append(np.array(a, dtype=float))
        self.objective.append(float(j))
        self.step_size.append(float(tau))
        self.backtracks.append(int(m))
        self.kernel_err.append(float(err) if err is not None else float("nan"))


def reconstruct(problem: InverseProblem, initial_coeffs, tol: float = 1e-10,
                max_iters: int = 100, true_kernel: InteractionKernel | None = None,
                error_axes=None,
                line_search: LineSearchParams = LineSearchParams()) -> ReconstructionHistory:
    """Gradient descent with Armijo backtracking on the mismatch objective.

    Stops when J < tol or after max_iters accepted iterations; records the
    kernel error against the truth (when given) on a fixed evaluation grid.
    """
    if len(np.atleast_1d(initial_coeffs)) != problem.basis.count:
        raise ValueError("initial coefficient count does not match the basis")
    if error_axes is None and true_kernel is not None:
        error_axes = default_error_axes(problem.basis.dim)
    ensemble = draw_ensemble(problem)
    history = ReconstructionHistory()

    def err_of(a):
        if true_kernel is None:
            return None
        return kernel_error(assemble_param_kernel(problem.basis, a), true_kernel, error_axes)

    coeffs = np.asarray(initial_coeffs, dtype=float)
    j, traj = objective(problem, coeffs, ensemble)
    history.record(0, coeffs, j, 0.0, 0, err_of(coeffs))
    warm = None
    for k in range(1, max_iters + 1):
        if j < tol:
            history.converged = True
            break
        grad = coefficient_gradient(problem, coeffs, traj)
        if not np.any(grad):
            history.converged = True
            break
        evaluate = lambda a: objective(problem, a, ensemble)
        if line_search.mode == "coordinate":
            result, warm = coordinate_backtracking_step(j, coeffs, grad, evaluate,
                                                        line_search, warm)
        else:
            result = backtracking_step(j, coeffs, grad, evaluate, line_search)
        if result.stalled:
            history.stalled = True
            break
        coeffs, j, traj = result.coeffs, result.objective, result.payload
        history.record(k, coeffs, j, result.tau, result.backtracks, err_of(coeffs))
    return history


def write_history_csv(history: ReconstructionHistory, path) -> None:
    n_coeff = len(history.coeffs[0]) if history.coeffs else 0
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["k"] + [f"a_{i + 1}" for i in range(n_coeff)]
                        + ["J", "tau", "backtracks", "E"])
        for idx, k in enumerate(history.iterations):
            row = [str(k)]
            row += [repr(float(v)) for v in history.coeffs[idx]]
            row += [repr(history.objective[idx]), repr(history.step_size[idx]),
                    str(history.backtracks[idx]), repr(history.kernel_err[idx])]
            writer.writerow(row)
