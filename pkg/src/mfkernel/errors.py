"""Exception types shared across the toolkit."""


class DivergenceError(RuntimeError):
    """A simulated state became non-finite; the message names the first bad step."""


class CflError(RuntimeError):
    """An explicit transport step violated the CFL bound; the caller must shrink dt."""


class SamplingError(RuntimeError):
    """Rejection sampling accepted too few proposals (bad pdf_max or support box)."""


class GridAlignmentError(ValueError):
    """Two fields or grids that must share a discretization do not."""
