"""First-variation assembly in the particle and PDE formulations.

Gradient fields live on uniform node grids (symmetric about the origin for
displacement-variable fields); particle estimates scatter mollified Dirac
contributions onto the nodes, PDE estimates integrate aligned forward/adjoint
snapshots.  Time quadrature is left-endpoint Riemann on the shared Euler grid.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass

import numpy as np
from scipy.signal import correlate

from . import _pairops
from .errors import GridAlignmentError
from .kernels import BasisSet
from .meanfield import FieldHistory, Grid, grad_field
from .particle import AdjointTrajectory, ParticleTrajectory

_MAX_BUFFER_FLOATS = 8_000_000  # per-step scatter buffers are blocked below this


@dataclass(frozen=True)
class Mollifier:
    """Gaussian bump phi_eps(z) = eps^-d phi(z/eps) of unit mass."""

    eps: float
    dim: int = 1

    def __post_init__(self):
        if self.eps <= 0:
            raise ValueError("mollifier width must be positive")

    @property
    def cutoff(self) -> float:
        """Truncation radius; the tail beyond 8 eps is below 1e-14."""
        return 8.0 * self.eps

    def eval(self, z) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        if self.dim == 1:
            q = z * z
        else:
            q = np.sum(z * z, axis=-1)
        norm = (2.0 * math.pi) ** (-self.dim / 2.0) * self.eps ** (-self.dim)
        return norm * np.exp(-q / (2.0 * self.eps**2))

    def mass(self, n_points: int = 4001) -> float:
        """Quadrature of the bump over [-8 eps, 8 eps]^d (midpoint rule)."""
        ax = np.linspace(-self.cutoff, self.cutoff, n_points)
        h = ax[1] - ax[0]
        if self.dim == 1:
            return float(np.sum(self.eval(ax)) * h)
        g1, g2 = np.meshgrid(ax, ax, indexing="ij")
        return float(np.sum(self.eval(np.stack([g1, g2], axis=-1))) * h * h)


def symmetric_axis(extent: float, spacing: float) -> np.ndarray:
    """Uniform nodes k*spacing covering [-extent, extent], symmetric about 0."""
    half = int(round(extent / spacing))
    return (np.arange(2 * half + 1) - half) * spacing


@dataclass(frozen=True)
class GradientField:
    """d-component field sampled on a uniform node grid.

    values has shape (n,) in 1D and (n1, n2, 2) in 2D, matching the axes.
    """

    axes: tuple[np.ndarray, ...]
    values: np.ndarray

    @property
    def dim(self) -> int:
        return len(self.axes)

    @property
    def spacing(self) -> tuple[float, ...]:
        return tuple(float(ax[1] - ax[0]) for ax in self.axes)

    def node_volume(self) -> float:
        return float(np.prod(self.spacing))


def r_grid_for(x_grid: Grid, factor: int = 1) -> tuple[np.ndarray, ...]:
    """Default displacement grid: spacing = factor * dx over [-2L, 2L]."""
    h = x_grid.spacing[0] * factor
    ax = symmetric_axis(2.0 * x_grid.extent, h)
    return (ax,) * x_grid.dim


def _require_symmetric(axes):
    for ax in axes:
        if not np.allclose(ax + ax[::-1], 0.0, atol=1e-12):
            raise GridAlignmentError("displacement grid must be symmetric about the origin")


# ---------------------------------------------------------------------------
# velocity-field first variation (linear transport)
# ---------------------------------------------------------------------------

def velocity_gradient_pde(forward: FieldHistory, adjoint: FieldHistory) -> GradientField:
    """int_0^T grad g(t, x) f(t, x) dt on the shared cell-center grid."""
    if forward.grid != adjoint.grid or forward.time_grid != adjoint.time_grid:
        raise GridAlignmentError("forward and adjoint histories must share grids")
    grid = forward.grid
    dt = forward.time_grid.dt
    m = forward.time_grid.n_steps
    acc = None
    for k in range(m):
        h = grad_field(adjoint.snapshots[k], grid)
        f = forward.snapshots[k]
        term = h * f if grid.dim == 1 else h * f[:, :, None]
        acc = term if acc is None else acc + term
    axes = tuple(grid.centers(a) for a in range(grid.dim))
    return GradientField(axes=axes, values=acc * dt)


def velocity_gradient_particles(traj: ParticleTrajectory, adjoint: AdjointTrajectory,
                                mollifier: Mollifier, axes) -> GradientField:
    """Empirical mean over particles of the mollified single-agent variation.

    (1/N) sum_i sum_k dt Y_i(t_k) phi_eps(x - X_i(t_k)) per node x.
    """
    if traj.grid != adjoint.grid:
        raise GridAlignmentError("trajectory and adjoint must share the time grid")
    axes = tuple(np.asarray(a, dtype=float) for a in axes)
    h = float(axes[0][1] - axes[0][0])
    kmax = int(math.ceil(mollifier.cutoff / h))
    dt = traj.grid.dt
    m = traj.grid.n_steps
    if traj.dim == 1:
        nnodes = axes[0].size
        out = np.zeros(nnodes)
        block = max(1, _MAX_BUFFER_FLOATS // nnodes)
        for lo in range(0, m, block):
            hi = min(m, lo + block)
            bufs = np.zeros((hi - lo, nnodes))
            _pairops.scatter_points_1d(traj.states, adjoint.states, lo, hi, dt,
                                       float(axes[0][0]), h, nnodes, mollifier.eps, kmax, bufs)
            out += bufs.sum(axis=0)
        return GradientField(axes=axes, values=out)
    n1, n2 = axes[0].size, axes[1].size
    out = np.zeros((n1, n2, 2))
    block = max(1, _MAX_BUFFER_FLOATS // (n1 * n2 * 2))
    for lo in range(0, m, block):
        hi = min(m, lo + block)
        bufs = np.zeros((hi - lo, n1, n2, 2))
        _pairops.scatter_points_2d(traj.states, adjoint.states, lo, hi, dt,
                                   float(axes[0][0]), h, n1, n2, mollifier.eps, kmax, bufs)
        out += bufs.sum(axis=0)
    return GradientField(axes=axes, values=out)


# ---------------------------------------------------------------------------
# interaction-kernel first variation
# ---------------------------------------------------------------------------

def kernel_gradient_pde(forward: FieldHistory, adjoint: FieldHistory,
                        r_axes) -> GradientField:
    """int_0^T int f(t, x - r) f(t, x) grad g(t, x) dx dt on displacement nodes.

    The displacement spacing must be a positive integer multiple of the cell
    spacing so every shift x - r lands on cell centers (f is zero-extended).
    """
    if forward.grid != adjoint.grid or forward.time_grid != adjoint.time_grid:
        raise GridAlignmentError("forward and adjoint histories must share grids")
    grid = forward.grid
    r_axes = tuple(np.asarray(a, dtype=float) for a in r_axes)
    _require_symmetric(r_axes)
    hr = float(r_axes[0][1] - r_axes[0][0])
    dx = grid.spacing[0]
    factor = int(round(hr / dx))
    if factor < 1 or abs(hr - factor * dx) > 1e-9 * dx:
        raise GridAlignmentError(
            f"displacement spacing {hr} is not an integer multiple of cell spacing {dx}"
        )
    dt = forward.time_grid.dt
    m = forward.time_grid.n_steps
    dv = grid.cell_volume
    if grid.dim == 1:
        n = grid.cells[0]
        nr = r_axes[0].size
        half = (nr - 1) // 2
        out = np.zeros(nr)
        for k in range(m):
            f = forward.snapshots[k]
            q = f * grad_field(adjoint.snapshots[k], grid)
            # G[s] = sum_j q[j] f[j - s] for integer shifts s
            full = np.correlate(q, f, mode="full")  # index s + n - 1
            for midx in range(nr):
                s = (midx - half) * factor
                if -n < s < n:
                    out[midx] += full[s + n - 1]
        return GradientField(axes=r_axes, values=out * dt * dv)
    n1, n2 = grid.cells
    nr1, nr2 = r_axes[0].size, r_axes[1].size
    half1, half2 = (nr1 - 1) // 2, (nr2 - 1) // 2
    out = np.zeros((nr1, nr2, 2))
    for k in range(m):
        f = forward.snapshots[k]
        h = grad_field(adjoint.snapshots[k], grid)
        for comp in range(2):
            q = f * h[:, :, comp]
            full = correlate(q, f, mode="full", method="direct")
            for m1 in range(nr1):
                s1 = (m1 - half1) * factor
                if not (-n1 < s1 < n1):
                    continue
                for m2 in range(nr2):
                    s2 = (m2 - half2) * factor
                    if -n2 < s2 < n2:
                        out[m1, m2, comp] += full[s1 + n1 - 1, s2 + n2 - 1]
    return GradientField(axes=r_axes, values=out * dt * dv)


def kernel_gradient_particles(traj: ParticleTrajectory, adjoint: AdjointTrajectory,
                              mollifier: Mollifier, r_axes) -> GradientField:
    """Mollified pair-sum estimate of the kernel first variation.

    (1/N^2) sum_i sum_{j != i} sum_k dt Y_i(t_k) phi_eps(r - (X_i - X_j)(t_k));
    only pairs within the 8 eps mollifier cutoff of a node contribute.
    """
    if traj.grid != adjoint.grid:
        raise GridAlignmentError("trajectory and adjoint must share the time grid")
    r_axes = tuple(np.asarray(a, dtype=float) for a in r_axes)
    _require_symmetric(r_axes)
    h = float(r_axes[0][1] - r_axes[0][0])
    kmax = int(math.ceil(mollifier.cutoff / h))
    dt = traj.grid.dt
    m = traj.grid.n_steps
    if traj.dim == 1:
        nnodes = r_axes[0].size
        out = np.zeros(nnodes)
        block = max(1, _MAX_BUFFER_FLOATS // nnodes)
        for lo in range(0, m, block):
            hi = min(m, lo + block)
            bufs = np.zeros((hi - lo, nnodes))
            _pairops.scatter_pairs_1d(traj.states, adjoint.states, lo, hi, dt,
                                      float(r_axes[0][0]), h, nnodes, mollifier.eps, kmax, bufs)
            out += bufs.sum(axis=0)
        return GradientField(axes=r_axes, values=out)
    n1, n2 = r_axes[0].size, r_axes[1].size
    out = np.zeros((n1, n2, 2))
    block = max(1, _MAX_BUFFER_FLOATS // (n1 * n2 * 2))
    for lo in range(0, m, block):
        hi = min(m, lo + block)
        bufs = np.zeros((hi - lo, n1, n2, 2))
        _pairops.scatter_pairs_2d(traj.states, adjoint.states, lo, hi, dt,
                                  float(r_axes[0][0]), h, n1, n2, mollifier.eps, kmax, bufs)
        out += bufs.sum(axis=0)
    return GradientField(axes=r_axes, values=out)


# ---------------------------------------------------------------------------
# pairing, projection, comparison
# ---------------------------------------------------------------------------

def _axes_equal(a, b):
    return len(a) == len(b) and all(x.shape == y.shape and np.array_equal(x, y)
                                    for x, y in zip(a, b))


def weak_pairing(field: GradientField, other) -> float:
    """Componentwise L2 pairing sum_j int A_j B_j dr by midpoint quadrature.

    `other` is a GradientField on the identical grid or a callable test
    function evaluated on the field's nodes.
    """
    if isinstance(other, GradientField):
        if not _axes_equal(field.axes, other.axes):
            raise GridAlignmentError("weak pairing requires identical grids")
        vals = other.values
    else:
        if field.dim == 1:
            vals = np.asarray(other(field.axes[0]), dtype=float)
        else:
            g1, g2 = np.meshgrid(field.axes[0], field.axes[1], indexing="ij")
            vals = np.asarray(other(np.stack([g1, g2], axis=-1)), dtype=float)
        if vals.shape != field.values.shape:
            raise GridAlignmentError("test function values do not match the field shape")
    return float(np.sum(field.values * vals) * field.node_volume())


def project_gradient(traj: ParticleTrajectory, adjoint: AdjointTrajectory,
                     basis: BasisSet) -> np.ndarray:
    """Exact pairwise projection of the particle first variation onto the basis.

    grad_l = (1/N^2) sum_i sum_{j != i} sum_k dt Y_i(t_k) . b_l((X_i - X_j)(t_k));
    no mollifier and no displacement grid are involved.
    """
    if basis.dim != traj.dim:
        raise GridAlignmentError(f"basis dim {basis.dim} != trajectory dim {traj.dim}")
    if traj.grid != adjoint.grid:
        raise GridAlignmentError("trajectory and adjoint must share the time grid")
    cs, ce = _pairops.chunk_bounds(traj.states.shape[1])
    if basis.family == "laguerre1d":
        from .kernels import _laguerre_poly_coeffs

        nl = basis.count
        bpolys = np.zeros((nl, nl))
        for l in range(1, nl + 1):
            pc = _laguerre_poly_coeffs(l)
            bpolys[l - 1, : pc.size] = pc
        return _pairops.project_laguerre_1d(traj.states, adjoint.states,
                                            traj.grid.dt, bpolys, cs, ce)
    if basis.family == "gaussgrad2d":
        bparams = np.empty((basis.count, 2))
        for idx, t in enumerate(basis.thetas, start=1):
            bparams[idx - 1, 0] = (-1.0) ** idx / (2.0 * math.pi * t * t)
            bparams[idx - 1, 1] = t
        return _pairops.project_gauss_2d(traj.states, adjoint.states,
                                         traj.grid.dt, bparams, cs, ce)
    # generic path: full pairwise evaluation per member (test-scale sizes)
    n = traj.states.shape[1]
    m = traj.grid.n_steps
    out = np.zeros(basis.count)
    for k in range(m):
        xk = traj.states[k]
        yk = adjoint.states[k]
        if traj.dim == 1:
            diffs = xk[:, None] - xk[None, :]
        else:
            diffs = xk[:, None, :] - xk[None, :, :]
        for l, member in enumerate(basis.members):
            b = np.asarray(member.eval(diffs))
            if traj.dim == 1:
                np.fill_diagonal(b, 0.0)
                out[l] += np.sum(yk[:, None] * b)
            else:
                b[np.arange(n), np.arange(n)] = 0.0
                out[l] += np.einsum("ia,ija->", yk, b)
    return out * traj.grid.dt / (n * n)


def compare_fields(a: GradientField, b: GradientField, mode: str = "linf") -> float:
    """Max-norm distance between two fields, optionally relative to |b|_inf."""
    if not _axes_equal(a.axes, b.axes):
        raise GridAlignmentError("fields live on different grids")
    diff = float(np.max(np.abs(a.values - b.values)))
    if mode == "linf":
        return diff
    if mode == "relative-linf":
        ref = float(np.max(np.abs(b.values)))
        if ref == 0.0:
            raise ZeroDivisionError("relative error against an identically zero field")
        return diff / ref
    raise ValueError(f"unknown mode {mode!r}")


# ---------------------------------------------------------------------------
# CSV dump with JSON sidecar
# ---------------------------------------------------------------------------

def write_gradient_csv(field: GradientField, path, meta: dict | None = None) -> None:
    path = str(path)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        if field.dim == 1:
            writer.writerow(["r", "value"])
            for x, v in zip(field.axes[0], field.values):
                writer.writerow([repr(float(x)), repr(float(v))])
        else:
            writer.writerow(["r1", "r2", "value1", "value2"])
            for i1, x1 in enumerate(field.axes[0]):
                for i2, x2 in enumerate(field.axes[1]):
                    writer.writerow([repr(float(x1)), repr(float(x2)),
                                     repr(float(field.values[i1, i2, 0])),
                                     repr(float(field.values[i1, i2, 1]))])
    if meta is not None:
        with open(path + ".json", "w") as fh:
            json.dump(meta, fh, indent=1)
