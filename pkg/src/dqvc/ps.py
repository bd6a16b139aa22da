"""Multistage propagation-separation estimation across directions.

Stage I fits every direction on its own. Stage II refits each direction on the
stacked losses of nearby directions, weighted by angular proximity and by the
similarity of their current estimates, over a growing neighbourhood. Stage III
freezes directions whose estimates drift too far from a reference stage.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import gammainccinv

from .admm import AdmmOptions, factorize, solve_pqr_many
from .exceptions import ConfigError, InvalidInputError, NumericalError
from .quantile import DirectionGrid, FunctionalDataset, check_loss, design_matrix
from .splines import SplineBasis

logger = logging.getLogger(__name__)

DEFAULT_LAMBDA_GRID = (0.001, 0.01, 0.1, 1.0)


def chi2_upper_quantile(df, u) -> float:
    """``x`` with ``P(chi2_df > x) = u``."""
    if not 0.0 < u < 1.0:
        raise InvalidInputError(f"upper-tail probability must lie in (0, 1), got {u!r}")
    if df < 1:
        raise InvalidInputError("degrees of freedom must be >= 1")
    return float(2.0 * gammainccinv(df / 2.0, u))


@dataclass
class PsOptions:
    """Tuning of the multistage procedure.

    The similarity scale is ``n**alpha * chi2_1(.8)`` where ``n`` counts
    observations (subjects times grid points) when ``cn_basis`` is
    ``"observations"`` and subjects when it is ``"subjects"``. ``cn``
    overrides the scale outright; ``lam`` fixes the penalty and skips
    cross-validation.
    """

    h: float = 1.15
    C: int = 5
    c0: int = 1
    alpha: float = 1.0
    lambda_grid: tuple = DEFAULT_LAMBDA_GRID
    cv_folds: int = 5
    cv_directions: int = 8
    lam: float | None = None
    cn: float | None = None
    cn_basis: str = "observations"

    def __post_init__(self):
        if self.h <= 1:
            raise InvalidInputError("bandwidth growth h must exceed 1")
        if self.C < 0 or int(self.C) != self.C:
            raise InvalidInputError("C must be a nonnegative integer")
        if self.C > 0 and not 1 <= self.c0 < max(self.C, 2):
            raise InvalidInputError("c0 must satisfy 1 <= c0 < C")
        if not 0.3 <= self.alpha <= 1.3:
            raise InvalidInputError("alpha must lie in [0.3, 1.3]")
        self.lambda_grid = tuple(float(v) for v in self.lambda_grid)
        if not self.lambda_grid or min(self.lambda_grid) <= 0:
            raise InvalidInputError("lambda_grid must be a nonempty set of positive values")
        if self.cv_folds < 2:
            raise InvalidInputError("cv_folds must be at least 2")
        if self.lam is not None and self.lam < 0:
            raise InvalidInputError("lam must be nonnegative")
        if self.cn is not None and self.cn <= 0:
            raise InvalidInputError("cn must be positive")
        if self.cn_basis not in ("observations", "subjects"):
            raise InvalidInputError("cn_basis must be 'observations' or 'subjects'")

    def sample_size(self, data) -> int:
        return data.n * data.J if self.cn_basis == "observations" else data.n

    def similarity_scale(self, n) -> float:
        if self.cn is not None:
            return float(self.cn)
        return float(n) ** self.alpha * chi2_upper_quantile(1, 0.8)


@dataclass
class CoefficientField:
    """Per-direction spline coefficients ``coeffs[r] = C(s_r).ravel()`` (p x M, row-major)."""

    grid: DirectionGrid
    tau: float
    coeffs: np.ndarray
    variances: np.ndarray
    p: int
    M: int
    lam: float
    stage: int = 0
    frozen: np.ndarray = None

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=float)
        self.variances = np.asarray(self.variances, dtype=float)
        if self.frozen is None:
            self.frozen = np.zeros(self.grid.d, dtype=bool)
        shape = (self.grid.d, self.p * self.M)
        if self.coeffs.shape != shape or self.variances.shape != shape:
            raise InvalidInputError(f"coefficient arrays must have shape {shape}")
        if np.any(self.variances <= 0):
            raise InvalidInputError("variances must be strictly positive")

    def coefficient_matrix(self, r) -> np.ndarray:
        return self.coeffs[r].reshape(self.p, self.M)

    def copy(self) -> "CoefficientField":
        return replace(
            self,
            coeffs=self.coeffs.copy(),
            variances=self.variances.copy(),
            frozen=self.frozen.copy(),
        )

    def to_dict(self) -> dict:
        return {
            "n_directions": self.grid.d,
            "tau": self.tau,
            "p": self.p,
            "M": self.M,
            "lambda": self.lam,
            "stage": self.stage,
            "frozen": [bool(f) for f in self.frozen],
            "coeffs": self.coeffs.tolist(),
            "variances": self.variances.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CoefficientField":
        return cls(
            grid=DirectionGrid(int(d["n_directions"])),
            tau=float(d["tau"]),
            coeffs=np.array(d["coeffs"], dtype=float),
            variances=np.array(d["variances"], dtype=float),
            p=int(d["p"]),
            M=int(d["M"]),
            lam=float(d["lambda"]),
            stage=int(d.get("stage", 0)),
            frozen=np.array(d.get("frozen", [False] * int(d["n_directions"])), dtype=bool),
        )


def full_penalty(basis: SplineBasis, p: int) -> np.ndarray:
    """Roughness penalty summed over the ``p`` coefficient functions."""
    return np.kron(np.eye(p), basis.omega)


def projected_responses(data: FunctionalDataset, grid: DirectionGrid) -> np.ndarray:
    """All projections at once, shape ``(n*J, d)``; column ``r`` is ``s_r' y``."""
    return data.responses.reshape(-1, 2) @ grid.directions.T


def _density_at_zero(residuals, weights=None) -> float:
    """Gaussian-kernel density estimate at 0 with Silverman's bandwidth."""
    e = np.asarray(residuals, dtype=float).ravel()
    w = np.ones_like(e) if weights is None else np.asarray(weights, dtype=float).ravel()
    sd = np.std(e)
    q75, q25 = np.percentile(e, [75, 25])
    spread = min(sd, (q75 - q25) / 1.34) if q75 > q25 else sd
    bw = 0.9 * spread * e.size ** (-0.2)
    if not np.isfinite(bw) or bw <= 0:
        return 1e-6
    dens = np.sum(w * np.exp(-0.5 * (e / bw) ** 2)) / (np.sum(w) * bw * np.sqrt(2 * np.pi))
    return max(float(dens), 1e-6)


def estimate_variances(X, residuals, tau, lam, omega, block_weights=None, density=None):
    """Diagonal of the penalized quantile-regression sandwich covariance.

    ``tau (1 - tau) diag(D1^-1 X'X D1^-1)`` with ``D1 = f(0) X'X + 2 lam Omega``,
    ``f(0)`` a kernel density estimate of the residuals at zero. For a stacked
    problem with block weights ``w_k`` (``residuals`` unweighted, block-major)
    the two Gram terms become ``sum w_k`` and ``sum w_k**2`` multiples of
    ``X'X``, which is the same formula applied to the row-scaled design.
    """
    X = np.asarray(X, dtype=float)
    gram = X.T @ X
    if block_weights is None:
        a1 = a2 = 1.0
        kde_w = None
    else:
        w = np.asarray(block_weights, dtype=float)
        a1, a2 = float(w.sum()), float(w @ w)
        kde_w = np.repeat(w, X.shape[0])
    f0 = _density_at_zero(residuals, kde_w) if density is None else float(density)
    D1 = f0 * a1 * gram + 2.0 * lam * np.asarray(omega, dtype=float)
    try:
        A = np.linalg.solve(D1, gram)
        cov = np.linalg.solve(D1, A.T)
    except np.linalg.LinAlgError as exc:
        raise NumericalError("sandwich matrix is singular") from exc
    return np.maximum(tau * (1 - tau) * a2 * np.diag(cov), 1e-12)


def _probe_indices(d, k):
    k = min(k, d)
    return np.unique(np.round(np.arange(k) * d / k).astype(int) % d)


def select_lambda(data, basis, grid, tau, opts=None, admm_opts=None) -> float:
    """K-fold cross-validation of the penalty over subjects.

    Scores each candidate by the mean held-out check loss of the projected
    responses, averaged over a spread of probe directions. Folds are assigned
    by subject position modulo the fold count.
    """
    opts = opts or PsOptions()
    admm_opts = admm_opts or AdmmOptions()
    grid_vals = opts.lambda_grid
    if len(grid_vals) == 1:
        return grid_vals[0]
    folds = np.arange(data.n) % opts.cv_folds
    if min(np.bincount(folds, minlength=opts.cv_folds)) < data.p:
        raise ConfigError(f"a cross-validation fold holds fewer than p={data.p} subjects")
    dirs = grid.directions[_probe_indices(grid.d, opts.cv_directions)]
    omega = full_penalty(basis, data.p)
    scores = np.zeros(len(grid_vals))
    for k in range(opts.cv_folds):
        train = data.subset(np.flatnonzero(folds != k))
        test = data.subset(np.flatnonzero(folds == k))
        Xtr, Xte = design_matrix(train, basis), design_matrix(test, basis)
        Ytr = train.responses.reshape(-1, 2) @ dirs.T
        Yte = test.responses.reshape(-1, 2) @ dirs.T
        for j, lam in enumerate(grid_vals):
            fits = solve_pqr_many(Xtr, Ytr, tau, lam, omega, admm_opts)
            Bhat = np.column_stack([f.b for f in fits])
            scores[j] += np.mean(check_loss(Yte - Xte @ Bhat, tau))
    best = int(np.argmin(scores))
    logger.debug("cv scores for tau=%s: %s -> lambda=%s", tau, scores, grid_vals[best])
    return grid_vals[best]


def _problem(data, basis):
    X = design_matrix(data, basis)
    return X, full_penalty(basis, data.p)


def stage1_fit(data, basis, grid, tau, opts=None, admm_opts=None, *, _cache=None):
    """Initial estimates: each direction solved on its own projected responses."""
    opts = opts or PsOptions()
    admm_opts = admm_opts or AdmmOptions()
    lam = opts.lam if opts.lam is not None else select_lambda(data, basis, grid, tau, opts, admm_opts)
    X, omega = _cache if _cache is not None else _problem(data, basis)
    Yp = projected_responses(data, grid)
    factor = factorize(X, lam, omega, admm_opts.rho)
    fits = solve_pqr_many(X, Yp, tau, lam, omega, admm_opts, factor=factor)
    _report_unconverged(fits, "stage I")
    coeffs = np.array([f.b for f in fits])
    resid = Yp - X @ coeffs.T
    variances = np.array(
        [estimate_variances(X, resid[:, r], tau, lam, omega) for r in range(grid.d)]
    )
    return CoefficientField(grid, tau, coeffs, variances, data.p, basis.M, lam, stage=0)


def _report_unconverged(fits, where):
    bad = [i for i, f in enumerate(fits) if not f.converged]
    if bad:
        logger.warning("%s: ADMM hit max_iters for direction(s) %s", where, bad)


def ps_weights(field: CoefficientField, center: int, c: int, n: int, opts=None) -> np.ndarray:
    """Propagation-separation weights of every direction around ``center`` at stage ``c``.

    Product of ``K_loc(u) = (1 - u)_+`` on chord distance over ``d0 * h**c`` and
    ``K_st(u) = min(1, 2 (1 - u)_+)`` on the diagonal Mahalanobis distance over
    the similarity scale. Directions outside the neighbourhood get weight 0;
    the centre always gets weight 1.
    """
    opts = opts or PsOptions()
    grid = field.grid
    radius = grid.d0 * opts.h**c
    dist = grid.chord_distances(center)
    inside = dist <= radius * (1 + 1e-12)
    diff = field.coeffs - field.coeffs[center]
    maha = np.sum(diff * diff / field.variances[center], axis=1)
    k_loc = np.maximum(1.0 - dist / radius, 0.0)
    k_st = np.minimum(1.0, 2.0 * np.maximum(1.0 - maha / opts.similarity_scale(n), 0.0))
    w = np.where(inside, k_loc * k_st, 0.0)
    w[center] = 1.0
    return w


def stage2_update(data, basis, field, c, opts=None, admm_opts=None, *, _cache=None):
    """One synchronous adaptive sweep over all non-frozen directions.

    Weights are computed from ``field`` (stage ``c - 1``) for every direction
    before any estimate is replaced.
    """
    opts = opts or PsOptions()
    admm_opts = admm_opts or AdmmOptions()
    X, omega = _cache if _cache is not None else _problem(data, basis)
    Yp = projected_responses(data, field.grid)
    active = np.flatnonzero(~field.frozen)
    new = field.copy()
    new.stage = c
    if active.size == 0:
        return new
    weights = {r0: ps_weights(field, r0, c, opts.sample_size(data), opts) for r0 in active}
    neighbours = {r0: np.flatnonzero(w > 0) for r0, w in weights.items()}
    L = max(nb.size for nb in neighbours.values())
    N = X.shape[0]
    Ys = np.zeros((L, N, active.size))
    Ws = np.zeros((L, active.size))
    for col, r0 in enumerate(active):
        nb = neighbours[r0]
        Ys[: nb.size, :, col] = Yp[:, nb].T
        Ws[: nb.size, col] = weights[r0][nb]
    factor = factorize(X, field.lam, omega, admm_opts.rho)
    fits = solve_pqr_many(
        X, Ys, field.tau, field.lam, omega, admm_opts, block_weights=Ws, factor=factor
    )
    _report_unconverged(fits, f"stage II (c={c})")
    for col, r0 in enumerate(active):
        b = fits[col].b
        nb = neighbours[r0]
        resid = (Yp[:, nb] - (X @ b)[:, None]).T
        new.coeffs[r0] = b
        new.variances[r0] = estimate_variances(
            X, resid, field.tau, field.lam, omega, block_weights=Ws[: nb.size, col]
        )
    return new


def stage3_check(field_c, field_c0, c):
    """Component-wise stop test against the reference stage.

    Returns ``(stop, statistic)``: per direction, whether any normalized squared
    change ``(B_c - B_c0)**2 / var(B_c0)`` exceeds ``chi2_1`` upper quantile at
    ``.8 / c``, and the largest such change.
    """
    u = 0.8 / c
    if not 0.0 < u < 1.0:
        raise InvalidInputError(f"stop check needs c >= 1, got {c}")
    stat = (field_c.coeffs - field_c0.coeffs) ** 2 / field_c0.variances
    max_stat = stat.max(axis=1)
    return max_stat > chi2_upper_quantile(1, u), max_stat


@dataclass
class StageRecord:
    stage: int
    coeffs: np.ndarray = field(repr=False)
    frozen: np.ndarray = field(repr=False)
    statistic: np.ndarray = field(repr=False)
    newly_frozen: list = field(default_factory=list)


def run_multistage(data, basis, grid, tau, opts=None, admm_opts=None):
    """Stage I followed by up to ``C`` adaptive sweeps with stop checking.

    Returns ``(initial_field, final_field, trace)``; ``trace`` has one
    ``StageRecord`` per completed sweep.
    """
    opts = opts or PsOptions()
    admm_opts = admm_opts or AdmmOptions()
    cache = _problem(data, basis)
    initial = stage1_fit(data, basis, grid, tau, opts, admm_opts, _cache=cache)
    current = initial.copy()
    reference = initial if opts.c0 == 0 else None
    trace = []
    for c in range(1, opts.C + 1):
        updated = stage2_update(data, basis, current, c, opts, admm_opts, _cache=cache)
        statistic = np.zeros(grid.d)
        newly = []
        if c > opts.c0 and reference is not None:
            stop, statistic = stage3_check(updated, reference, c)
            stop &= ~current.frozen
            newly = [int(r) for r in np.flatnonzero(stop)]
            updated.coeffs[stop] = current.coeffs[stop]
            updated.variances[stop] = current.variances[stop]
            updated.frozen = current.frozen | stop
        if c == opts.c0:
            reference = updated.copy()
        trace.append(StageRecord(c, updated.coeffs.copy(), updated.frozen.copy(), statistic, newly))
        current = updated
        if current.frozen.all():
            break
    return initial, current, trace
