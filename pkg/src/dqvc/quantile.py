"""Check loss, its proximal map, directional projection and the Kronecker design."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .exceptions import DataValidationError, InvalidInputError
from .splines import SplineBasis, eval_basis


def _check_tau(tau):
    if not 0.0 < tau < 1.0:
        raise InvalidInputError(f"tau must lie in (0, 1), got {tau!r}")


def check_loss(u, tau):
    """Quantile check loss ``u * (tau - 1[u < 0])``, elementwise."""
    _check_tau(tau)
    u = np.asarray(u, dtype=float)
    out = u * (tau - (u < 0))
    return out if out.ndim else float(out)


def soft_threshold(v, a):
    return np.maximum(v - a, 0.0) - np.maximum(-v - a, 0.0)


def check_prox(v, tau, rho, w=1.0):
    """``argmin_r w * check_loss(r, tau) + rho / 2 * (r - v)**2``.

    Broadcasts over ``v`` and ``w``. The weight enters through positive
    homogeneity of the check loss, so the threshold and shift both scale by ``w``.
    """
    if np.any(np.asarray(rho) <= 0) or np.any(np.asarray(w) <= 0):
        raise InvalidInputError("rho and w must be positive")
    v = np.asarray(v, dtype=float)
    scale = np.asarray(w, dtype=float) / (2.0 * rho)
    out = soft_threshold(v - scale * (2.0 * tau - 1.0), scale)
    return out if out.ndim else float(out)


@dataclass(frozen=True, eq=False)
class FunctionalDataset:
    """Bivariate functional responses on a common grid with subject-level covariates.

    ``responses`` has shape ``(n, J, 2)`` and ``covariates`` shape ``(n, p)``;
    by convention the first covariate column is the intercept.
    """

    t_grid: np.ndarray
    responses: np.ndarray
    covariates: np.ndarray
    subject_ids: tuple = field(default=())

    def __post_init__(self):
        t = np.asarray(self.t_grid, dtype=float).ravel()
        Y = np.asarray(self.responses, dtype=float)
        X = np.asarray(self.covariates, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        if Y.ndim != 3 or Y.shape[2] != 2:
            raise InvalidInputError(f"responses must have shape (n, J, 2), got {Y.shape}")
        if Y.shape[0] != X.shape[0]:
            raise InvalidInputError("responses and covariates disagree on subject count")
        if Y.shape[1] != t.size:
            raise InvalidInputError("responses and t_grid disagree on grid size")
        if np.any(np.diff(t) <= 0) or t.size == 0 or t[0] < 0 or t[-1] > 1:
            raise InvalidInputError("t_grid must be strictly increasing within [0, 1]")
        if not (np.all(np.isfinite(Y)) and np.all(np.isfinite(X))):
            raise InvalidInputError("dataset contains missing or non-finite values")
        ids = tuple(self.subject_ids) if len(self.subject_ids) else tuple(range(X.shape[0]))
        if len(ids) != X.shape[0]:
            raise InvalidInputError("subject_ids length must equal subject count")
        object.__setattr__(self, "t_grid", t)
        object.__setattr__(self, "responses", Y)
        object.__setattr__(self, "covariates", X)
        object.__setattr__(self, "subject_ids", ids)

    @property
    def n(self) -> int:
        return self.covariates.shape[0]

    @property
    def J(self) -> int:
        return self.t_grid.size

    @property
    def p(self) -> int:
        return self.covariates.shape[1]

    def subset(self, idx) -> "FunctionalDataset":
        idx = np.asarray(idx)
        return FunctionalDataset(
            self.t_grid,
            self.responses[idx],
            self.covariates[idx],
            tuple(self.subject_ids[i] for i in idx),
        )


@dataclass(frozen=True, eq=False)
class DirectionGrid:
    """``d`` equally spaced unit directions, angles starting at ``-pi``."""

    d: int

    def __post_init__(self):
        if int(self.d) != self.d or self.d < 1:
            raise InvalidInputError(f"direction count must be a positive integer, got {self.d!r}")
        object.__setattr__(self, "d", int(self.d))

    @property
    def angles(self) -> np.ndarray:
        return -np.pi + 2.0 * np.pi * np.arange(self.d) / self.d

    @property
    def directions(self) -> np.ndarray:
        a = self.angles
        dirs = np.column_stack([np.cos(a), np.sin(a)])
        # exact zeros on the axes, e.g. cos(-pi/2)
        dirs[np.abs(dirs) < 1e-15] = 0.0
        return dirs

    @property
    def d0(self) -> float:
        return 2.0 * math.sin(math.pi / self.d)

    def chord_distances(self, r0: int) -> np.ndarray:
        """Chord distances from direction ``r0`` to every direction."""
        steps = np.abs(np.arange(self.d) - r0) % self.d
        return 2.0 * np.sin(np.pi * np.minimum(steps, self.d - steps) / self.d)


def project_responses(data: FunctionalDataset, s) -> np.ndarray:
    """``s^T y_i(t_j)`` as an ``(n, J)`` array."""
    s = np.asarray(s, dtype=float).ravel()
    if s.size != 2 or abs(np.linalg.norm(s) - 1.0) > 1e-9:
        raise InvalidInputError("projection direction must be a unit 2-vector")
    return data.responses @ s


def design_matrix(data: FunctionalDataset, basis: SplineBasis) -> np.ndarray:
    """Rows ``kron(x_i, H(t_j))`` ordered subject-major, shape ``(n*J, p*M)``.

    Coefficient vectors are ``C.ravel()`` for the ``p x M`` matrix ``C`` (basis
    index fastest), so ``row @ b == x_i @ C @ H(t_j)``.
    """
    H = eval_basis(basis, data.t_grid)
    return np.kron(data.covariates, H)


def read_dataset_csv(path) -> FunctionalDataset:
    """Read long-format CSV ``subject_id,t,y1,y2,x1,...,xp`` (one row per grid point)."""
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataValidationError(f"{path}: empty file") from None
        required = ["subject_id", "t", "y1", "y2"]
        missing = [c for c in required if c not in header]
        if missing:
            raise DataValidationError(f"{path}: missing required column(s) {', '.join(missing)}")
        xcols = sorted(
            (h for h in header if h.startswith("x") and h[1:].isdigit()), key=lambda h: int(h[1:])
        )
        if not xcols or [int(h[1:]) for h in xcols] != list(range(1, len(xcols) + 1)):
            raise DataValidationError(f"{path}: covariate columns must be x1..xp")
        col = {h: i for i, h in enumerate(header)}
        bad, records = [], []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                vals = [float(row[col[c]]) for c in ["t", "y1", "y2", *xcols]]
                sid = row[col["subject_id"]].strip()
                if not sid or not all(math.isfinite(v) for v in vals):
                    raise ValueError
            except (ValueError, IndexError):
                bad.append(lineno)
                continue
            records.append((sid, vals))
    if bad:
        raise DataValidationError(f"{path}: missing or invalid values on lines {bad}", rows=bad)
    if not records:
        raise DataValidationError(f"{path}: no data rows")

    by_subject: dict[str, list] = {}
    for sid, vals in records:
        by_subject.setdefault(sid, []).append(vals)
    grid = None
    Y, X = [], []
    for sid, rows in by_subject.items():
        arr = np.array(sorted(rows, key=lambda v: v[0]))
        if grid is None:
            grid = arr[:, 0]
        elif arr.shape[0] != grid.size or not np.array_equal(arr[:, 0], grid):
            raise DataValidationError(f"{path}: subject {sid} has a different t grid")
        xs = arr[:, 3:]
        if np.any(xs != xs[0]):
            raise DataValidationError(f"{path}: covariates vary within subject {sid}")
        Y.append(arr[:, 1:3])
        X.append(xs[0])
    try:
        return FunctionalDataset(grid, np.array(Y), np.array(X), tuple(by_subject))
    except InvalidInputError as exc:
        raise DataValidationError(f"{path}: {exc}") from exc


def write_dataset_csv(data: FunctionalDataset, path) -> None:
    header = ["subject_id", "t", "y1", "y2"] + [f"x{k + 1}" for k in range(data.p)]
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for i, sid in enumerate(data.subject_ids):
            xs = [repr(float(v)) for v in data.covariates[i]]
            for j, t in enumerate(data.t_grid):
                y1, y2 = data.responses[i, j]
                writer.writerow([sid, repr(float(t)), repr(float(y1)), repr(float(y2)), *xs])
