"""Interaction kernels, velocity fields, and the fixed odd basis families.

All built-in kernels have the form w(r) = r * s(|r|) with s even, so
antisymmetry w(-r) = -w(r) holds bitwise and w(0) = 0 exactly.  Jacobians
are analytic per family.  Kernel and basis objects are immutable after
construction and safe to evaluate concurrently.

Shape conventions: 1D kernels map arrays of shape (...) to (...); kernels in
d >= 2 map (..., d) to (..., d) and their Jacobians to (..., d, d).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import special

LAGUERRE_L_MAX = 8

# family tags consumed by the numba pair steppers (particle._pairops)
PAIR_EXP_POLY_1D = 1  # w(r) = r * exp(-|r|/2) * P(|r|)
PAIR_GAUSS_SUM = 2    # w(r) = r * sum_m k_m exp(-|r|^2 / (2 theta_m^2))


def _as_points(r, dim):
    """Coerce kernel input to an (n, dim) array; returns (points, unbatch)."""
    a = np.asarray(r, dtype=float)
    if dim == 1:
        pts = np.atleast_1d(a).reshape(-1, 1)
        shape = a.shape
    else:
        if a.shape[-1] != dim:
            raise ValueError(f"expected trailing dimension {dim}, got shape {a.shape}")
        pts = a.reshape(-1, dim)
        shape = a.shape[:-1]
    return pts, shape


class InteractionKernel:
    """Base class: an odd vector field r -> w(r) with analytic Jacobian."""

    dim: int

    def eval(self, r):
        raise NotImplementedError

    def jacobian(self, r):
        raise NotImplementedError

    def pair_descriptor(self):
        """(family_tag, params, poly) consumed by the fast pair steppers, or None."""
        return None


@dataclass(frozen=True)
class GaussSumKernel(InteractionKernel):
    """w(r) = r * sum_m amp_m exp(-|r|^2 / (2 theta_m^2)), any dimension."""

    dim: int
    amps: tuple[float, ...]
    thetas: tuple[float, ...]

    def __post_init__(self):
        if len(self.amps) != len(self.thetas):
            raise ValueError("amps and thetas length mismatch")
        if any(t <= 0 for t in self.thetas):
            raise ValueError("thetas must be positive")

    def _s(self, q):
        # q = |r|^2
        out = np.zeros_like(q)
        for a, t in zip(self.amps, self.thetas):
            out += a * np.exp(-q / (2.0 * t * t))
        return out

    def _s_q(self, q):
        out = np.zeros_like(q)
        for a, t in zip(self.amps, self.thetas):
            out += -a / (2.0 * t * t) * np.exp(-q / (2.0 * t * t))
        return out

    def eval(self, r):
        pts, shape = _as_points(r, self.dim)
        q = np.sum(pts * pts, axis=-1)
        w = pts * self._s(q)[:, None]
        return w[:, 0].reshape(shape) if self.dim == 1 else w.reshape(*shape, self.dim)

    def jacobian(self, r):
        pts, shape = _as_points(r, self.dim)
        q = np.sum(pts * pts, axis=-1)
        s = self._s(q)
        sq = self._s_q(q)
        eye = np.eye(self.dim)
        jac = s[:, None, None] * eye + 2.0 * sq[:, None, None] * pts[:, :, None] * pts[:, None, :]
        if self.dim == 1:
            return jac[:, 0, 0].reshape(shape)
        return jac.reshape(*shape, self.dim, self.dim)

    def pair_descriptor(self):
        params = np.array([v for a, t in zip(self.amps, self.thetas) for v in (a, t)], dtype=float)
        return PAIR_GAUSS_SUM, params, np.zeros(0)


@dataclass(frozen=True)
class ExpPolyKernel1D(InteractionKernel):
    """w(r) = r * exp(-|r|/2) * P(|r|) with P in ascending monomial coefficients."""

    poly: tuple[float, ...]
    dim: int = 1

    def _p(self, a):
        return np.polynomial.polynomial.polyval(a, np.asarray(self.poly))

    def _p_prime(self, a):
        dcoef = np.polynomial.polynomial.polyder(np.asarray(self.poly))
        return np.polynomial.polynomial.polyval(a, dcoef)

    def eval(self, r):
        a = np.abs(np.asarray(r, dtype=float))
        return np.asarray(r) * np.exp(-a / 2.0) * self._p(a)

    def jacobian(self, r):
        # w'(r) = e^{-|r|/2} [ P(|r|) (1 - |r|/2) + |r| P'(|r|) ], even in r
        a = np.abs(np.asarray(r, dtype=float))
        return np.exp(-a / 2.0) * (self._p(a) * (1.0 - a / 2.0) + a * self._p_prime(a))

    def pair_descriptor(self):
        return PAIR_EXP_POLY_1D, np.zeros(0), np.asarray(self.poly, dtype=float)


def gaussian_kernel_1d() -> InteractionKernel:
    """The fixed 1D Gaussian-derivative kernel w(r) = 5/sqrt(2 pi) * r * exp(-r^2/2)."""
    return GaussSumKernel(dim=1, amps=(5.0 / math.sqrt(2.0 * math.pi),), thetas=(1.0,))


def zero_kernel(dim: int) -> InteractionKernel:
    return GaussSumKernel(dim=dim, amps=(0.0,), thetas=(1.0,))


# ---------------------------------------------------------------------------
# basis families
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BasisFunction:
    """A single odd basis member with analytic Jacobian."""

    dim: int
    eval: Callable[[np.ndarray], np.ndarray]
    jacobian: Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class BasisSet:
    """Ordered family of odd vector fields used to parameterize kernels."""

    dim: int
    members: tuple[BasisFunction, ...]
    family: str = "custom"
    # family-specific construction data (Laguerre: nothing; gauss-grad: widths)
    thetas: tuple[float, ...] = ()

    @property
    def count(self) -> int:
        return len(self.members)


def _laguerre_poly_coeffs(l: int) -> np.ndarray:
    """Monomial coefficients (ascending) of c_l * L^{(2)}_{l-1}."""
    c = 1.0 / math.sqrt(l * (l + 1))
    coeffs = special.genlaguerre(l - 1, 2).coefficients[::-1]  # ascending
    return c * np.asarray(coeffs, dtype=float)


def laguerre_basis_1d(l: int) -> BasisFunction:
    """Odd 1D basis member b_l(r) = c_l r e^{-|r|/2} L^{(2)}_{l-1}(|r|).

    The normalization c_l = (l(l+1))^{-1/2} comes from the generalized Laguerre
    orthogonality int_0^inf r^2 e^{-r} L^{(2)}_{l-1} L^{(2)}_{m-1} dr =
    l(l+1) delta_{lm}, making int_0^inf b_l b_m dr = delta_{lm}.
    """
    if not isinstance(l, (int, np.integer)) or l < 1:
        raise ValueError(f"basis index must be an integer >= 1, got {l!r}")
    if l > LAGUERRE_L_MAX:
        raise ValueError(f"basis index {l} exceeds supported maximum {LAGUERRE_L_MAX}")
    c = 1.0 / math.sqrt(l * (l + 1))

    def b(r):
        a = np.abs(np.asarray(r, dtype=float))
        return c * np.asarray(r) * np.exp(-a / 2.0) * special.eval_genlaguerre(l - 1, 2, a)

    def db(r):
        a = np.abs(np.asarray(r, dtype=float))
        lag = special.eval_genlaguerre(l - 1, 2, a)
        dlag = -special.eval_genlaguerre(l - 2, 3, a) if l >= 2 else np.zeros_like(a)
        return c * np.exp(-a / 2.0) * (lag * (1.0 - a / 2.0) + a * dlag)

    return BasisFunction(dim=1, eval=b, jacobian=db)


def laguerre_basis_set(count: int, validate: bool = True) -> BasisSet:
    """First `count` members of the 1D Laguerre-Gaussian family.

    With validate=True the closed-form normalization is checked against
    Simpson quadrature of int_0^60 b_l(r)^2 dr at construction time.
    """
    members = tuple(laguerre_basis_1d(l) for l in range(1, count + 1))
    if validate:
        r = np.linspace(0.0, 60.0, 2**14 + 1)
        from scipy.integrate import simpson

        for l, m in enumerate(members, start=1):
            norm = simpson(m.eval(r) ** 2, x=r)
            if abs(norm - 1.0) > 1e-6:
                raise AssertionError(f"Laguerre member {l} normalization off: {norm}")
    return BasisSet(dim=1, members=members, family="laguerre1d")


def gaussian_grad_basis_2d(i: int, theta: float) -> BasisFunction:
    """Odd 2D basis member b_i(r) = (-1)^i (2 pi theta^2)^{-1} r exp(-|r|^2/(2 theta^2))."""
    if i not in (1, 2):
        raise ValueError(f"basis index must be 1 or 2, got {i!r}")
    if theta <= 0:
        raise ValueError(f"width must be positive, got {theta}")
    amp = (-1.0) ** i / (2.0 * math.pi * theta * theta)
    k = GaussSumKernel(dim=2, amps=(amp,), thetas=(theta,))
    return BasisFunction(dim=2, eval=k.eval, jacobian=k.jacobian)


def gaussian_grad_basis_set(thetas: Sequence[float] = (0.25, 1.0)) -> BasisSet:
    members = tuple(gaussian_grad_basis_2d(i, t) for i, t in enumerate(thetas, start=1))
    return BasisSet(dim=2, members=members, family="gaussgrad2d", thetas=tuple(thetas))


@dataclass(frozen=True)
class ParamKernel(InteractionKernel):
    """Kernel assembled as a coefficient combination of a fixed odd basis."""

    basis: BasisSet
    coeffs: tuple[float, ...]
    dim: int = field(init=False)

    def __post_init__(self):
        if len(self.coeffs) != self.basis.count:
            raise ValueError(
                f"coefficient count {len(self.coeffs)} != basis count {self.basis.count}"
            )
        object.__setattr__(self, "dim", self.basis.dim)

    def eval(self, r):
        out = None
        for a, m in zip(self.coeffs, self.basis.members):
            term = a * m.eval(r)
            out = term if out is None else out + term
        return out

    def jacobian(self, r):
        out = None
        for a, m in zip(self.coeffs, self.basis.members):
            term = a * m.jacobian(r)
            out = term if out is None else out + term
        return out

    def pair_descriptor(self):
        if self.basis.family == "laguerre1d":
            poly = np.zeros(self.basis.count)
            for l, a in enumerate(self.coeffs, start=1):
                pc = a * _laguerre_poly_coeffs(l)
                poly[: pc.size] += pc
            return PAIR_EXP_POLY_1D, np.zeros(0), poly
        if self.basis.family == "gaussgrad2d":
            params = []
            for i, (a, t) in enumerate(zip(self.coeffs, self.basis.thetas), start=1):
                params += [a * (-1.0) ** i / (2.0 * math.pi * t * t), t]
            return PAIR_GAUSS_SUM, np.array(params, dtype=float), np.zeros(0)
        return None


def assemble_param_kernel(basis: BasisSet, coeffs: Sequence[float]) -> ParamKernel:
    """Coefficient-linear combination of the basis members (eval and Jacobian)."""
    return ParamKernel(basis=basis, coeffs=tuple(float(a) for a in coeffs))


# ---------------------------------------------------------------------------
# velocity fields (non-interacting transport)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class VelocityField:
    """A velocity field x -> a(x) with analytic Jacobian."""

    dim: int
    eval: Callable[[np.ndarray], np.ndarray]
    jacobian: Callable[[np.ndarray], np.ndarray]


def constant_velocity(dim: int, value) -> VelocityField:
    v = np.asarray(value, dtype=float)

    def ev(x):
        x = np.asarray(x, dtype=float)
        if dim == 1:
            return np.broadcast_to(float(v), x.shape).copy()
        return np.broadcast_to(v, x.shape).copy()

    def jac(x):
        x = np.asarray(x, dtype=float)
        if dim == 1:
            return np.zeros_like(x)
        return np.zeros(x.shape[:-1] + (dim, dim))

    return VelocityField(dim=dim, eval=ev, jacobian=jac)


def linear_velocity_1d(slope: float = 1.0) -> VelocityField:
    return VelocityField(
        dim=1,
        eval=lambda x: slope * np.asarray(x, dtype=float),
        jacobian=lambda x: np.full_like(np.asarray(x, dtype=float), slope),
    )


# ---------------------------------------------------------------------------
# assumption probe
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class KernelAssumptionReport:
    sup_w: float
    sup_jacobian: float
    antisymmetry_defect: float


def verify_kernel_assumptions(kernel: InteractionKernel, box, n_samples: int,
                              seed: int = 0) -> KernelAssumptionReport:
    """Sampled bound estimates for |w|, |grad w| and the antisymmetry defect.

    `box` is (lo, hi) per coordinate (scalars broadcast across dimensions).
    |w| is the euclidean norm, |grad w| the max absolute Jacobian entry.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    lo, hi = box
    rng = np.random.default_rng(seed)
    d = kernel.dim
    pts = rng.uniform(lo, hi, size=(n_samples, d))
    r = pts[:, 0] if d == 1 else pts
    w = np.asarray(kernel.eval(r))
    jac = np.asarray(kernel.jacobian(r))
    if d == 1:
        sup_w = float(np.max(np.abs(w)))
        sup_j = float(np.max(np.abs(jac)))
    else:
        sup_w = float(np.max(np.linalg.norm(w, axis=-1)))
        sup_j = float(np.max(np.abs(jac)))
    defect = float(np.max(np.abs(np.asarray(kernel.eval(-r)) + w)))
    return KernelAssumptionReport(sup_w=sup_w, sup_jacobian=sup_j, antisymmetry_defect=defect)
