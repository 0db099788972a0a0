"""Clamped B-spline bases over the size-bin index."""
from dataclasses import dataclass

import numpy as np

from . import kernels


class SplineDomainError(ValueError):
    """Raised for evaluation points outside the basis domain."""


@dataclass(frozen=True, eq=False)
class BSplineBasis:
    """Immutable clamped B-spline basis.

    Attributes
    ----------
    degree : int
        Polynomial degree (3 for the mean curves, 2 for the log variance).
    knots : ndarray
        Full knot vector, boundary knots repeated ``degree + 1`` times.
    """

    degree: int
    knots: np.ndarray

    def __post_init__(self):
        knots = np.array(self.knots, dtype=float)
        knots.setflags(write=False)
        object.__setattr__(self, "knots", knots)

    @property
    def n_basis(self) -> int:
        return self.knots.size - self.degree - 1

    @property
    def domain(self) -> tuple[float, float]:
        return float(self.knots[0]), float(self.knots[-1])

    @property
    def interior_knots(self) -> np.ndarray:
        p = self.degree
        return self.knots[p + 1:self.knots.size - p - 1]

    def __call__(self, x):
        return eval_basis(self, x)

    def to_dict(self) -> dict:
        return {"degree": self.degree, "knots": [float(k) for k in self.knots]}

    @classmethod
    def from_dict(cls, d: dict) -> "BSplineBasis":
        return cls(int(d["degree"]), np.asarray(d["knots"], dtype=float))


def make_basis(degree, domain, n_interior_knots=None, interior_knots=None):
    """Build a clamped basis on ``domain`` with equally spaced interior knots.

    Parameters
    ----------
    degree : int
        Spline degree. The model uses 3 and 2; lower degrees are accepted for
        toy problems.
    domain : (float, float)
        Closed interval ``[lo, hi]`` with ``lo < hi``.
    n_interior_knots : int, optional
        Number of equally spaced interior knots.
    interior_knots : sequence of float, optional
        Explicit interior knots; overrides ``n_interior_knots``.

    Returns
    -------
    BSplineBasis
        Basis with ``n_interior_knots + degree + 1`` functions.
    """
    degree = int(degree)
    if degree < 0:
        raise ValueError(f"invalid spline degree {degree}")
    lo, hi = (float(v) for v in domain)
    if not (np.isfinite(lo) and np.isfinite(hi)) or hi <= lo:
        raise ValueError(f"degenerate spline domain [{lo}, {hi}]")
    if interior_knots is None:
        if n_interior_knots is None:
            n_interior_knots = 0
        if n_interior_knots < 0:
            raise ValueError("n_interior_knots must be >= 0")
        interior = np.linspace(lo, hi, int(n_interior_knots) + 2)[1:-1]
    else:
        interior = np.sort(np.asarray(interior_knots, dtype=float))
        if interior.size and (interior[0] <= lo or interior[-1] >= hi):
            raise ValueError("interior knots must lie strictly inside the domain")
    knots = np.concatenate([np.full(degree + 1, lo), interior, np.full(degree + 1, hi)])
    return BSplineBasis(degree, knots)


def _check_points(basis, x):
    lo, hi = basis.domain
    bad = ~((x >= lo) & (x <= hi))
    if np.any(bad):
        raise SplineDomainError(
            f"point {x[bad][0]!r} outside basis domain [{lo}, {hi}]")


def eval_basis(basis, x):
    """Basis values at a single point ``x`` (no extrapolation)."""
    xa = np.asarray([x], dtype=float)
    _check_points(basis, xa)
    return kernels.bspline_design(basis.knots, basis.degree, xa)[0]


def basis_matrix(basis, points):
    """Design matrix with one row of basis values per point."""
    pts = np.atleast_1d(np.asarray(points, dtype=float)).ravel()
    _check_points(basis, pts)
    return kernels.bspline_design(basis.knots, basis.degree, pts)


def bin_basis(n_bins, n_basis, degree, knots=None):
    """Basis of size ``n_basis`` over bins ``1..n_bins``.

    ``knots`` optionally lists interior knots explicitly, in which case
    ``n_basis`` must agree with ``len(knots) + degree + 1``.
    """
    if n_bins < 2:
        raise ValueError("need at least two size bins")
    n_interior = n_basis - degree - 1
    if knots is not None:
        if len(knots) != n_interior:
            raise ValueError(
                f"{len(knots)} interior knots do not give {n_basis} degree-{degree} basis functions")
        return make_basis(degree, (1, n_bins), interior_knots=knots)
    if n_interior < 0:
        raise ValueError(f"degree-{degree} basis needs at least {degree + 1} functions")
    return make_basis(degree, (1, n_bins), n_interior)
