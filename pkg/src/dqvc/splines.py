"""Clamped B-spline bases on [0, 1] and their second-derivative roughness penalty."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import BSpline

from .exceptions import DomainError, InvalidInputError


@dataclass(frozen=True, eq=False)
class SplineBasis:
    """B-spline basis with clamped boundary knots at 0 and 1.

    Attributes
    ----------
    degree : int
        Polynomial degree of each piece.
    interior_knots : ndarray
        Strictly increasing knots inside (0, 1).
    full_knots : ndarray
        Interior knots padded with ``degree + 1`` copies of 0 and of 1.
    omega : ndarray, shape (M, M)
        Gram matrix of second derivatives over [0, 1].
    """

    degree: int
    interior_knots: np.ndarray
    full_knots: np.ndarray = field(repr=False)
    omega: np.ndarray = field(repr=False)

    @property
    def M(self) -> int:
        return len(self.interior_knots) + self.degree + 1

    def __call__(self, t) -> np.ndarray:
        return eval_basis(self, t)

    def to_dict(self) -> dict:
        return {"degree": int(self.degree), "knots": [float(k) for k in self.interior_knots]}

    @classmethod
    def from_dict(cls, spec: dict) -> "SplineBasis":
        degree = int(spec.get("degree", 3))
        if "knots" in spec and spec["knots"] is not None:
            knots = spec["knots"]
        else:
            count = int(spec.get("knot_count", 14))
            knots = evenly_spaced_knots(count, *(spec.get("knot_range") or ()))
        return build_basis(degree, knots)


def evenly_spaced_knots(count: int, lo: float | None = None, hi: float | None = None) -> np.ndarray:
    """``count`` evenly spaced interior knots.

    With ``lo`` and ``hi`` the knots span ``[lo, hi]`` inclusive; without them
    they split [0, 1] into ``count + 1`` equal intervals.
    """
    if lo is None or hi is None:
        return np.arange(1, count + 1) / (count + 1.0)
    if count == 0:
        return np.empty(0)
    if count == 1:
        return np.array([(lo + hi) / 2.0])
    return np.linspace(lo, hi, count)


def build_basis(degree: int = 3, interior_knots=None) -> SplineBasis:
    """Construct a clamped basis from its interior knots.

    The default layout is 14 evenly spaced knots splitting [0, 1] into 15
    equal intervals.
    """
    if interior_knots is None:
        interior_knots = evenly_spaced_knots(14)
    if int(degree) != degree or degree < 0:
        raise InvalidInputError(f"degree must be a nonnegative integer, got {degree!r}")
    degree = int(degree)
    knots = np.asarray(interior_knots, dtype=float).ravel()
    if knots.size and (knots.min() <= 0.0 or knots.max() >= 1.0):
        raise InvalidInputError("interior knots must lie strictly inside (0, 1)")
    if np.any(np.diff(knots) <= 0):
        raise InvalidInputError("interior knots must be strictly increasing")
    full = np.concatenate([np.zeros(degree + 1), knots, np.ones(degree + 1)])
    basis = SplineBasis(degree, knots, full, np.zeros((0, 0)))
    object.__setattr__(basis, "omega", penalty_matrix(basis))
    return basis


def _identity_spline(basis: SplineBasis) -> BSpline:
    return BSpline(basis.full_knots, np.eye(basis.M), basis.degree, extrapolate=True)


def eval_basis(basis: SplineBasis, t) -> np.ndarray:
    """Evaluate ``H(t)``.

    Returns a vector of length M for scalar ``t`` and an array of shape
    ``(len(t), M)`` otherwise. ``t = 1`` is evaluated as the limit from the left.
    """
    tt = np.asarray(t, dtype=float)
    if np.any(~np.isfinite(tt)) or np.any(tt < 0.0) or np.any(tt > 1.0):
        raise DomainError("basis evaluation requires t in [0, 1]")
    values = _identity_spline(basis)(np.atleast_1d(tt))
    # scipy's local evaluation leaves tiny negative round-off
    values = np.clip(values, 0.0, None)
    return values[0] if tt.ndim == 0 else values


def eval_basis_derivative(basis: SplineBasis, t, order: int = 1) -> np.ndarray:
    tt = np.atleast_1d(np.asarray(t, dtype=float))
    if order > basis.degree:
        return np.zeros((tt.size, basis.M))
    return _identity_spline(basis).derivative(order)(tt)


def penalty_matrix(basis: SplineBasis) -> np.ndarray:
    """Exact ``int_0^1 H''(t) H''(t)^T dt`` by per-interval Gauss-Legendre quadrature."""
    M, k = basis.M, basis.degree
    if k < 2:
        return np.zeros((M, M))
    n_points = max(1, int(np.ceil((2 * (k - 2) + 1) / 2)))
    nodes, weights = np.polynomial.legendre.leggauss(n_points)
    breaks = np.unique(basis.full_knots)
    a, b = breaks[:-1], breaks[1:]
    half = (b - a) / 2.0
    t = (a[:, None] + half[:, None] * (nodes[None, :] + 1.0)).ravel()
    w = (half[:, None] * weights[None, :]).ravel()
    d2 = eval_basis_derivative(basis, t, order=2)
    omega = (d2 * w[:, None]).T @ d2
    return (omega + omega.T) / 2.0
