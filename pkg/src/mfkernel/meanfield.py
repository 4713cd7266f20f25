"""Conservative upwind finite-volume solvers for the Eulerian formulations.

Forward equations (linear transport and the nonlocal mean-field equation) are
advanced by forward Euler with donor-cell fluxes; the dual equations are
integrated backward in time, upwinded in the direction actually integrated.
Densities live at cell centers on a truncation box [-L, L]^d with
zero extension beyond the boundary.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import convolve as sig_convolve
from scipy.signal import fftconvolve

from .errors import CflError, GridAlignmentError
from .kernels import InteractionKernel, VelocityField
from .particle import TimeGrid

CFL_SAFETY = 0.9


@dataclass(frozen=True)
class Grid:
    """Cell-centered grid on the box [-extent, extent]^dim."""

    dim: int
    extent: float
    cells: tuple[int, ...]

    def __post_init__(self):
        if self.dim not in (1, 2):
            raise ValueError("only dimensions 1 and 2 are supported")
        if len(self.cells) != self.dim or any(c < 3 for c in self.cells):
            raise ValueError("need at least 3 cells per axis")
        if self.extent <= 0:
            raise ValueError("extent must be positive")

    @property
    def spacing(self) -> tuple[float, ...]:
        return tuple(2.0 * self.extent / c for c in self.cells)

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacing))

    def centers(self, axis: int) -> np.ndarray:
        n = self.cells[axis]
        h = self.spacing[axis]
        return -self.extent + (np.arange(n) + 0.5) * h

    def mesh(self):
        """Cell-center coordinates: array (n,) in 1D, (n1, n2, 2) in 2D."""
        if self.dim == 1:
            return self.centers(0)
        x1, x2 = np.meshgrid(self.centers(0), self.centers(1), indexing="ij")
        return np.stack([x1, x2], axis=-1)


def grid_1d(extent: float, cells: int) -> Grid:
    return Grid(dim=1, extent=extent, cells=(cells,))


def grid_2d(extent: float, cells: int) -> Grid:
    return Grid(dim=2, extent=extent, cells=(cells, cells))


@dataclass(frozen=True)
class DensityField:
    grid: Grid
    values: np.ndarray
    time: float = 0.0

    @property
    def mass(self) -> float:
        return float(np.sum(self.values) * self.grid.cell_volume)


@dataclass(frozen=True)
class AdjointField:
    grid: Grid
    values: np.ndarray
    time: float = 0.0


@dataclass(frozen=True)
class FieldHistory:
    """Snapshots of a scalar field at every step of a time grid."""

    grid: Grid
    time_grid: TimeGrid
    snapshots: np.ndarray  # (M+1, *cells)

    def at(self, k: int) -> np.ndarray:
        return self.snapshots[k]


def density_from_spec(spec, grid: Grid, normalize: bool = False) -> DensityField:
    """Sample a DensitySpec pdf at cell centers.

    With normalize=True the sampled values are rescaled to unit grid mass,
    removing the midpoint-quadrature mass defect of under-resolved features
    (the particle side always carries exactly unit mass).
    """
    vals = np.asarray(spec.pdf(grid.mesh()), dtype=float).reshape(grid.cells)
    if normalize:
        vals = vals / (np.sum(vals) * grid.cell_volume)
    return DensityField(grid=grid, values=vals, time=0.0)


# ---------------------------------------------------------------------------
# convolution velocity u = w * f by midpoint quadrature
# ---------------------------------------------------------------------------

def convolve_velocity(kernel: InteractionKernel, f: DensityField) -> np.ndarray:
    """u(x_c) = sum_{c'} w(x_c - x_{c'}) f(x_{c'}) dV on cell centers.

    1D uses direct summation (np.convolve); 2D uses zero-padded FFT
    convolution, which is linear (no periodic wraparound).
    Returns shape (n,) in 1D, (n1, n2, 2) in 2D.
    """
    grid = f.grid
    if kernel.dim != grid.dim:
        raise GridAlignmentError(f"kernel dim {kernel.dim} != grid dim {grid.dim}")
    dv = grid.cell_volume
    if grid.dim == 1:
        n = grid.cells[0]
        h = grid.spacing[0]
        diffs = np.arange(-(n - 1), n) * h
        wvals = np.asarray(kernel.eval(diffs)) * dv
        return sig_convolve(f.values, wvals, mode="same", method="direct")
    n1, n2 = grid.cells
    h1, h2 = grid.spacing
    d1 = np.arange(-(n1 - 1), n1) * h1
    d2 = np.arange(-(n2 - 1), n2) * h2
    dd1, dd2 = np.meshgrid(d1, d2, indexing="ij")
    stencil = np.asarray(kernel.eval(np.stack([dd1, dd2], axis=-1))) * dv
    out = np.empty((n1, n2, 2))
    for a in range(2):
        out[:, :, a] = fftconvolve(f.values, stencil[:, :, a], mode="same")
    return out


def convolve_field(kernel: InteractionKernel, values: np.ndarray, grid: Grid) -> np.ndarray:
    """w * q for a d-component field q (used by the dual nonlocal term).

    q has shape (n,) in 1D or (n1, n2, 2) in 2D; returns sum_a w_a * q_a
    contracted against the kernel components, i.e. the scalar field
    (w * q)(x) = sum_cells w(x - x') . q(x') dV.
    """
    dv = grid.cell_volume
    if grid.dim == 1:
        n = grid.cells[0]
        h = grid.spacing[0]
        diffs = np.arange(-(n - 1), n) * h
        wvals = np.asarray(kernel.eval(diffs)) * dv
        return sig_convolve(values, wvals, mode="same", method="direct")
    n1, n2 = grid.cells
    h1, h2 = grid.spacing
    d1 = np.arange(-(n1 - 1), n1) * h1
    d2 = np.arange(-(n2 - 1), n2) * h2
    dd1, dd2 = np.meshgrid(d1, d2, indexing="ij")
    stencil = np.asarray(kernel.eval(np.stack([dd1, dd2], axis=-1))) * dv
    out = np.zeros((n1, n2))
    for a in range(2):
        out += fftconvolve(values[:, :, a], stencil[:, :, a], mode="same")
    return out


# ---------------------------------------------------------------------------
# donor-cell upwind step (conservative), zero-inflow boundary
# ---------------------------------------------------------------------------

def _axis_flux_div(f, u, h, axis):
    """(F_{c+1/2} - F_{c-1/2})/h along one axis with donor-cell fluxes."""
    f = np.moveaxis(f, axis, 0)
    u = np.moveaxis(u, axis, 0)
    # interior face velocities: average of adjacent centers
    uf = 0.5 * (u[:-1] + u[1:])
    flux = np.maximum(uf, 0.0) * f[:-1] + np.minimum(uf, 0.0) * f[1:]
    full = np.empty((f.shape[0] + 1,) + f.shape[1:])
    full[1:-1] = flux
    # boundary faces: one-sided face velocity, outside density is zero
    full[0] = np.minimum(u[0], 0.0) * f[0]
    full[-1] = np.maximum(u[-1], 0.0) * f[-1]
    div = (full[1:] - full[:-1]) / h
    return np.moveaxis(div, 0, axis)


def check_cfl(u, grid: Grid, dt: float, safety: float = CFL_SAFETY) -> None:
    if grid.dim == 1:
        umax = (float(np.max(np.abs(u))),)
    else:
        umax = tuple(float(np.max(np.abs(u[..., a]))) for a in range(2))
    for a, (um, h) in enumerate(zip(umax, grid.spacing)):
        if um * dt / h > safety:
            raise CflError(
                f"CFL violated on axis {a}: |u|max*dt/dx = {um * dt / h:.3f} > {safety}"
            )


def cfl_dt(u_bound: float, grid: Grid, safety: float = CFL_SAFETY) -> float:
    """Largest stable dt for a velocity bound, uniform across axes."""
    return safety * min(grid.spacing) / max(u_bound, 1e-300)


def upwind_step(f: DensityField, u: np.ndarray, dt: float,
                safety: float = CFL_SAFETY) -> DensityField:
    """One conservative donor-cell Euler step of d/dt f + div(u f) = 0."""
    grid = f.grid
    check_cfl(u, grid, dt, safety)
    if grid.dim == 1:
        div = _axis_flux_div(f.values, u, grid.spacing[0], 0)
    else:
        div = (_axis_flux_div(f.values, u[:, :, 0], grid.spacing[0], 0)
               + _axis_flux_div(f.values, u[:, :, 1], grid.spacing[1], 1))
    return DensityField(grid=grid, values=f.values - dt * div, time=f.time + dt)


# ---------------------------------------------------------------------------
# forward solvers
# ---------------------------------------------------------------------------

def solve_forward_meanfield(kernel: InteractionKernel, f0: DensityField,
                            time_grid: TimeGrid, safety: float = CFL_SAFETY) -> FieldHistory:
    """Advance d/dt f + div((w*f) f) = 0, recomputing the velocity every step."""
    m = time_grid.n_steps
    snaps = np.empty((m + 1,) + f0.values.shape)
    snaps[0] = f0.values
    f = f0
    for k in range(m):
        u = convolve_velocity(kernel, f)
        f = upwind_step(f, u, time_grid.dt, safety)
        snaps[k + 1] = f.values
    return FieldHistory(grid=f0.grid, time_grid=time_grid, snapshots=snaps)


def solve_forward_linear(fieldv: VelocityField, f0: DensityField,
                         time_grid: TimeGrid, safety: float = CFL_SAFETY) -> FieldHistory:
    """Advance d/dt f + div(a(x) f) = 0 with a fixed velocity field."""
    grid = f0.grid
    mesh = grid.mesh()
    u = np.asarray(fieldv.eval(mesh))
    m = time_grid.n_steps
    snaps = np.empty((m + 1,) + f0.values.shape)
    snaps[0] = f0.values
    f = f0
    for k in range(m):
        f = upwind_step(f, u, time_grid.dt, safety)
        snaps[k + 1] = f.values
    return FieldHistory(grid=grid, time_grid=time_grid, snapshots=snaps)


# ---------------------------------------------------------------------------
# dual (backward) solvers
# ---------------------------------------------------------------------------

def grad_field(values: np.ndarray, grid: Grid) -> np.ndarray:
    """Cell-centered gradient: central differences inside, one-sided at edges.

    Returns (n,) in 1D and (n1, n2, 2) in 2D.
    """
    if grid.dim == 1:
        return np.gradient(values, grid.spacing[0])
    g1 = np.gradient(values, grid.spacing[0], axis=0)
    g2 = np.gradient(values, grid.spacing[1], axis=1)
    return np.stack([g1, g2], axis=-1)


def _advect_dual_step(g, u, grid, dt):
    """One reverse-time step of d/dt g + u . grad g = 0 (non-conservative).

    In reversed time tau = T - t the equation advects g with velocity -u;
    upwinding is applied in the direction actually integrated.
    """
    v = -u  # advection velocity in reversed time
    out = np.array(g, copy=True)
    for axis in range(grid.dim):
        h = grid.spacing[axis]
        ga = np.moveaxis(g, axis, 0)
        va = np.moveaxis(v if grid.dim == 1 else v[..., axis], axis, 0)
        back = np.empty_like(ga)   # (g_c - g_{c-1})/h, one-sided at the low edge
        back[1:] = (ga[1:] - ga[:-1]) / h
        back[0] = back[1]
        fwd = np.empty_like(ga)    # (g_{c+1} - g_c)/h, one-sided at the high edge
        fwd[:-1] = (ga[1:] - ga[:-1]) / h
        fwd[-1] = fwd[-2]
        upw = np.where(va > 0.0, back, fwd)
        outa = np.moveaxis(out, axis, 0)
        outa -= dt * va * upw
    return out


def solve_adjoint_linear(fieldv: VelocityField, measurement, time_grid: TimeGrid,
                         grid: Grid, safety: float = CFL_SAFETY) -> FieldHistory:
    """Backward solve of d/dt g + a(x) . grad g = 0 with g(T, x) = nu(x)."""
    mesh = grid.mesh()
    u = np.asarray(fieldv.eval(mesh))
    check_cfl(u, grid, time_grid.dt, safety)
    m = time_grid.n_steps
    snaps = np.empty((m + 1,) + tuple(grid.cells))
    snaps[m] = np.asarray(measurement.eval(mesh), dtype=float).reshape(grid.cells)
    for k in range(m - 1, -1, -1):
        snaps[k] = _advect_dual_step(snaps[k + 1], u, grid, time_grid.dt)
    return FieldHistory(grid=grid, time_grid=time_grid, snapshots=snaps)


def solve_adjoint_meanfield(kernel: InteractionKernel, forward: FieldHistory,
                            measurement, safety: float = CFL_SAFETY) -> FieldHistory:
    """Backward solve of the dual of the mean-field equation.

    d/dt g - w * (grad g f) + (w*f) . grad g = 0, g(T, x) = nu(x); the
    nonlocal term uses the same midpoint-quadrature convolution as the
    forward velocity, with grad g from central differences.
    """
    grid = forward.grid
    time_grid = forward.time_grid
    mesh = grid.mesh()
    m = time_grid.n_steps
    snaps = np.empty((m + 1,) + tuple(grid.cells))
    snaps[m] = np.asarray(measurement.eval(mesh), dtype=float).reshape(grid.cells)
    for k in range(m - 1, -1, -1):
        fk = DensityField(grid=grid, values=forward.snapshots[k])
        u = convolve_velocity(kernel, fk)
        check_cfl(u, grid, time_grid.dt, safety)
        gk1 = snaps[k + 1]
        h = grad_field(gk1, grid)
        if grid.dim == 1:
            nonlocal_term = convolve_field(kernel, h * fk.values, grid)
        else:
            nonlocal_term = convolve_field(kernel, h * fk.values[:, :, None], grid)
        # d/dt g = w*(grad g f) - u . grad g; step back: g_k = g_{k+1} - dt d/dt g
        advected = _advect_dual_step(gk1, u, grid, time_grid.dt)
        snaps[k] = advected - time_grid.dt * nonlocal_term
    return FieldHistory(grid=grid, time_grid=time_grid, snapshots=snaps)


# ---------------------------------------------------------------------------
# measurement functional
# ---------------------------------------------------------------------------

def measure(measurement, f: DensityField) -> float:
    """Midpoint quadrature of nu against the density."""
    vals = np.asarray(measurement.eval(f.grid.mesh()), dtype=float).reshape(f.grid.cells)
    return float(np.sum(vals * f.values) * f.grid.cell_volume)


# ---------------------------------------------------------------------------
# field dump: CSV of (coordinates..., value) plus a JSON sidecar
# ---------------------------------------------------------------------------

def write_density_csv(f: DensityField, path, dt: float | None = None) -> None:
    path = str(path)
    grid = f.grid
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        if grid.dim == 1:
            writer.writerow(["x", "value"])
            for x, v in zip(grid.centers(0), f.values):
                writer.writerow([repr(float(x)), repr(float(v))])
        else:
            writer.writerow(["x1", "x2", "value"])
            c1, c2 = grid.centers(0), grid.centers(1)
            for i1 in range(grid.cells[0]):
                for i2 in range(grid.cells[1]):
                    writer.writerow([repr(float(c1[i1])), repr(float(c2[i2])),
                                     repr(float(f.values[i1, i2]))])
    sidecar = {
        "t": f.time,
        "L": grid.extent,
        "cells": list(grid.cells),
        "dt": dt,
        "mass": f.mass,
    }
    with open(path + ".json", "w") as fh:
        json.dump(sidecar, fh, indent=1)
