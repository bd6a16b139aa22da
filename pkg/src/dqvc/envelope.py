"""Directional quantile envelopes: halfplane intersections and their summaries."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np

from .exceptions import InvalidInputError, UndefinedMetricError
from .quantile import DirectionGrid
from .splines import SplineBasis, eval_basis

BOX_HALF_SIDE = 5e5
MERGE_TOL = 1e-9


@dataclass
class Envelope:
    """Intersection of ``{v : s_r' v >= q_r}`` over the direction grid.

    ``vertices`` are counterclockwise; ``binding`` lists directions whose
    constraint is active on the boundary.
    """

    q: np.ndarray
    vertices: np.ndarray
    empty: bool
    binding: list = field(default_factory=list)
    tau: float | None = None
    t: float | None = None
    x: list | None = None

    @property
    def area(self) -> float:
        if self.empty or len(self.vertices) < 3:
            return 0.0
        v = self.vertices
        x, y = v[:, 0], v[:, 1]
        return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))

    def to_dict(self) -> dict:
        return {
            "tau": self.tau,
            "t": self.t,
            "x": None if self.x is None else [float(v) for v in self.x],
            "q": [float(v) for v in self.q],
            "vertices": [] if self.empty else self.vertices.tolist(),
            "empty": bool(self.empty),
        }


def directional_quantiles(field, basis: SplineBasis, x, t) -> np.ndarray:
    """``q_r = x' C(s_r) H(t)`` for every direction of the field."""
    x = np.asarray(x, dtype=float).ravel()
    if x.size != field.p:
        raise InvalidInputError(f"covariate vector has length {x.size}, expected {field.p}")
    if basis.M != field.M:
        raise InvalidInputError("basis dimension does not match the coefficient field")
    return field.coeffs @ np.kron(x, eval_basis(basis, t))


def _clip(poly, s, q):
    """Sutherland-Hodgman step keeping ``s' v >= q``."""
    if len(poly) == 0:
        return poly
    vals = poly @ s - q
    out = []
    n = len(poly)
    for i in range(n):
        a, b = poly[i], poly[(i + 1) % n]
        fa, fb = vals[i], vals[(i + 1) % n]
        if fa >= 0:
            out.append(a)
        if (fa >= 0) != (fb >= 0):
            out.append(a + (b - a) * (fa / (fa - fb)))
    return np.array(out) if out else np.empty((0, 2))


def _merge(poly):
    if len(poly) == 0:
        return poly
    keep = [poly[0]]
    for v in poly[1:]:
        if np.linalg.norm(v - keep[-1]) >= MERGE_TOL:
            keep.append(v)
    if len(keep) > 1 and np.linalg.norm(keep[0] - keep[-1]) < MERGE_TOL:
        keep.pop()
    return np.array(keep)


def build_envelope(grid, q, *, tau=None, t=None, x=None) -> Envelope:
    """Clip a large square by each halfplane in turn.

    ``grid`` is a DirectionGrid or a ``(d, 2)`` array of unit directions. An
    empty intersection is a valid result flagged by ``empty``.
    """
    dirs = grid.directions if isinstance(grid, DirectionGrid) else np.asarray(grid, dtype=float)
    q = np.asarray(q, dtype=float).ravel()
    if dirs.shape != (q.size, 2):
        raise InvalidInputError("need one quantile per direction")
    c = BOX_HALF_SIDE
    poly = np.array([[-c, -c], [c, -c], [c, c], [-c, c]], dtype=float)
    for s, qr in zip(dirs, q):
        poly = _merge(_clip(poly, s, qr))
        if len(poly) < 3:
            poly = np.empty((0, 2))
            break
    if len(poly) >= 3:
        poly = _refine(poly, dirs, q)
    if len(poly) >= 3 and abs(_signed_area(poly)) <= 1e-18:
        poly = np.empty((0, 2))
    empty = len(poly) == 0
    binding = []
    if not empty:
        slack = poly @ dirs.T - q[None, :]
        binding = [int(r) for r in np.flatnonzero(np.min(np.abs(slack), axis=0) <= 1e-7 * max(1.0, np.abs(q).max()))]
    return Envelope(q=q, vertices=poly, empty=empty, binding=binding, tau=tau, t=t, x=x)


def _refine(poly, dirs, q):
    """Recompute each vertex as the exact crossing of its two tightest lines.

    Clipping against the large box loses about ``1e-16 * BOX_HALF_SIDE`` per
    vertex; solving the 2x2 system restores full precision.
    """
    c = BOX_HALF_SIDE
    A = np.vstack([dirs, [[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]]])
    b = np.concatenate([q, [-c, -c, -c, -c]])
    out = poly.copy()
    scale = max(1.0, float(np.abs(poly).max()))
    for k, v in enumerate(poly):
        order = np.argsort(np.abs(A @ v - b))
        i = order[0]
        for j in order[1:4]:
            M = A[[i, j]]
            if abs(np.linalg.det(M)) > 1e-12:
                w = np.linalg.solve(M, b[[i, j]])
                if np.linalg.norm(w - v) <= 1e-6 * scale:
                    out[k] = w
                break
    return out


def _signed_area(v):
    x, y = v[:, 0], v[:, 1]
    return 0.5 * (np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


def contains(grid, q, point) -> bool:
    """Closed-halfplane membership: ``min_r (s_r' point - q_r) >= 0``."""
    return bool(inside_mask(grid, q, np.asarray(point, dtype=float)[None, :])[0])


def inside_mask(grid, q, points) -> np.ndarray:
    dirs = grid.directions if isinstance(grid, DirectionGrid) else np.asarray(grid, dtype=float)
    points = np.asarray(points, dtype=float).reshape(-1, 2)
    q = np.asarray(q, dtype=float).ravel()
    return np.all(points @ dirs.T - q[None, :] >= 0.0, axis=1)


def coverage(grid, q, points) -> float:
    """Fraction of ``points`` inside the envelope."""
    points = np.asarray(points, dtype=float).reshape(-1, 2)
    if points.shape[0] == 0:
        raise InvalidInputError("coverage needs at least one point")
    return float(np.mean(inside_mask(grid, q, points)))


def curvature(envelope) -> float:
    """Vertex-averaged discrete curvature of the envelope polygon.

    At each vertex, the absolute turning angle divided by the mean length of
    its two edges; a regular polygon circumscribing a circle of radius R gives
    approximately 1 / R.
    """
    v = envelope.vertices if isinstance(envelope, Envelope) else np.asarray(envelope, dtype=float)
    if (isinstance(envelope, Envelope) and envelope.empty) or len(v) < 3:
        raise UndefinedMetricError("curvature needs a nonempty polygon with >= 3 vertices")
    edges = np.roll(v, -1, axis=0) - v
    lengths = np.linalg.norm(edges, axis=1)
    if np.any(lengths <= 0) or abs(_signed_area(v)) <= 1e-18:
        raise UndefinedMetricError("degenerate polygon")
    prev = np.roll(edges, 1, axis=0)
    cross = prev[:, 0] * edges[:, 1] - prev[:, 1] * edges[:, 0]
    dot = np.sum(prev * edges, axis=1)
    turn = np.abs(np.arctan2(cross, dot))
    mean_len = 0.5 * (lengths + np.roll(lengths, 1))
    return float(np.mean(turn / mean_len))


def write_envelopes_json(envelopes, path, extra=None) -> None:
    doc = dict(extra or {})
    doc["envelopes"] = [e.to_dict() for e in envelopes]
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2)


def write_vertices_csv(envelopes, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["envelope", "tau", "t", "vertex", "v1", "v2"])
        for k, e in enumerate(envelopes):
            for i, (a, b) in enumerate(e.vertices if not e.empty else []):
                w.writerow([k, e.tau, e.t, i, repr(float(a)), repr(float(b))])
