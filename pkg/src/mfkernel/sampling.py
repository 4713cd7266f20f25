"""Initial densities and reproducible rejection sampling.

Every density carries an explicit support box and a pdf upper bound so
rejection from the uniform proposal on the box is exact.  Streams are
counter-based (Philox), keyed by the caller's seed: identical (spec, n, seed)
triples reproduce ensembles bitwise.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.special import erf

from .errors import SamplingError

_MAX_PROPOSALS = 10**7
_MIN_ACCEPT_RATE = 1e-4


@dataclass(frozen=True)
class DensitySpec:
    """A probability density with support box and pdf bound for rejection sampling."""

    dim: int
    pdf: Callable[[np.ndarray], np.ndarray]
    support_box: tuple[float, float]  # symmetric per-axis (lo, hi)
    pdf_max: float
    name: str = "density"


@dataclass(frozen=True)
class ParticleEnsemble:
    """N i.i.d. draws; positions has shape (N,) in 1D and (N, d) otherwise."""

    dim: int
    count: int
    positions: np.ndarray


def uniform_box(dim: int, half_width: float = 0.5) -> DensitySpec:
    """Exact (unmollified) uniform density on [-half_width, half_width]^d."""
    if half_width <= 0:
        raise ValueError("half_width must be positive")
    h = float(half_width)
    density = (2.0 * h) ** (-dim)

    def pdf(x):
        pts = np.atleast_2d(np.asarray(x, dtype=float).reshape(-1, dim) if dim > 1
                            else np.asarray(x, dtype=float).reshape(-1, 1))
        inside = np.all(np.abs(pts) <= h, axis=-1)
        out = np.where(inside, density, 0.0)
        return out.reshape(np.shape(x) if dim == 1 else np.shape(x)[:-1])

    return DensitySpec(dim=dim, pdf=pdf, support_box=(-h, h), pdf_max=density, name="uniform")


def mollified_uniform(dim: int, half_width: float = 0.5, eps: float = 0.01) -> DensitySpec:
    """Gaussian mollification of the uniform density on [-half_width, half_width]^d.

    The convolution has the exact per-axis form
    (erf((x+h)/(sqrt(2) eps)) - erf((x-h)/(sqrt(2) eps))) / (4h); in 2D the
    density is the product of the per-axis profiles.
    """
    if eps <= 0:
        raise ValueError("mollifier width must be positive")
    if half_width <= 0:
        raise ValueError("half_width must be positive")
    h, e = float(half_width), float(eps)

    def axis_pdf(x):
        return (erf((x + h) / (np.sqrt(2.0) * e))
                - erf((x - h) / (np.sqrt(2.0) * e))) / (4.0 * h)

    if dim == 1:
        def pdf(x):
            return axis_pdf(np.asarray(x, dtype=float))
    else:
        def pdf(x):
            pts = np.asarray(x, dtype=float).reshape(-1, dim)
            vals = np.ones(pts.shape[0])
            for a in range(dim):
                vals = vals * axis_pdf(pts[:, a])
            return vals.reshape(np.shape(x)[:-1])

    box = max(1.5, h + 1.0)  # tail mass beyond is < 1e-10 for eps <= 0.15
    peak = float(axis_pdf(np.zeros(1))[0]) ** dim
    return DensitySpec(dim=dim, pdf=pdf, support_box=(-box, box),
                       pdf_max=1.0001 * peak, name="mollified_uniform")


def bimodal_gaussian_1d() -> DensitySpec:
    """Equal mixture of two Gaussians at +-0.5 with variance 0.05."""

    def pdf(x):
        x = np.asarray(x, dtype=float)
        c = 0.5 / np.sqrt(0.1 * np.pi)
        return c * (np.exp(-(x + 0.5) ** 2 / 0.1) + np.exp(-(x - 0.5) ** 2 / 0.1))

    peak = float(pdf(0.5))
    return DensitySpec(dim=1, pdf=pdf, support_box=(-2.0, 2.0),
                       pdf_max=1.0001 * peak, name="bimodal1d")


def two_bump_gaussian_2d(theta: float = 0.05) -> DensitySpec:
    """Two product-Gaussian bumps centered at (+-0.5, 0.425) with variance theta."""
    if theta <= 0:
        raise ValueError("theta must be positive")

    def pdf(x):
        pts = np.asarray(x, dtype=float).reshape(-1, 2)
        x1, x2 = pts[:, 0], pts[:, 1]
        c = 0.5 / (2.0 * np.pi * theta)
        vals = c * np.exp(-(x2 - 0.425) ** 2 / (2.0 * theta)) * (
            np.exp(-(x1 - 0.5) ** 2 / (2.0 * theta)) + np.exp(-(x1 + 0.5) ** 2 / (2.0 * theta))
        )
        return vals.reshape(np.shape(x)[:-1])

    peak = float(pdf(np.array([[0.5, 0.425]]))[()])
    return DensitySpec(dim=2, pdf=pdf, support_box=(-2.0, 2.0),
                       pdf_max=1.0001 * peak, name="twobump2d")


def rejection_sample(spec: DensitySpec, n: int, seed: int) -> ParticleEnsemble:
    """Draw n i.i.d. samples from spec by rejection from the uniform proposal."""
    if n < 1:
        raise ValueError("sample count must be >= 1")
    rng = np.random.Generator(np.random.Philox(seed))
    lo, hi = spec.support_box
    d = spec.dim
    out = np.empty((n, d))
    accepted = 0
    proposed = 0
    while accepted < n:
        k = max(n - accepted, 1024)
        pts = rng.uniform(lo, hi, size=(k, d))
        u = rng.uniform(0.0, spec.pdf_max, size=k)
        vals = spec.pdf(pts[:, 0] if d == 1 else pts)
        keep = u < np.asarray(vals).reshape(k)
        take = min(int(np.sum(keep)), n - accepted)
        if take > 0:
            out[accepted:accepted + take] = pts[keep][:take]
        accepted += take
        proposed += k
        if proposed >= _MAX_PROPOSALS and accepted < max(1, _MIN_ACCEPT_RATE * proposed):
            raise SamplingError(
                f"acceptance rate {accepted / proposed:.2e} after {proposed} proposals; "
                "pdf_max too loose or support box wrong"
            )
    positions = out[:, 0] if d == 1 else out
    return ParticleEnsemble(dim=d, count=n, positions=positions)
