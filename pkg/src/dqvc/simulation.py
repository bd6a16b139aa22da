"""Monte Carlo designs for bivariate varying-coefficient quantile envelopes.

Random streams are Philox generators keyed by ``SeedSequence([seed, *keys])``:
replication ``k`` uses keys ``(0, k)`` and the truth oracle at the ``i``-th
quantile level uses ``(1, i, 0)`` for quantiles and ``(1, i, 1)`` for the
fresh evaluation sample. Replications therefore never share state and can run
in any order or process.
"""

from __future__ import annotations

import csv
import io
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import stats

from .admm import AdmmOptions
from .envelope import build_envelope, coverage, curvature, directional_quantiles
from .exceptions import DqvcError, InvalidInputError, UndefinedMetricError
from .ps import PsOptions, run_multistage
from .quantile import DirectionGrid, FunctionalDataset
from .splines import SplineBasis, build_basis, evenly_spaced_knots

logger = logging.getLogger(__name__)

COEFF_SETS = ("smooth", "rough")
REPRODUCTION_KNOT_RANGE = (0.02, 0.93)
ERROR_DISTS = ("I", "II", "III")


def rng_for(seed, *keys) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), *keys])))


def true_coefficients(coeff_set, t):
    """``(beta_1(t), beta_2(t))``, each of shape ``(3, len(t))``."""
    t = np.asarray(t, dtype=float)
    if coeff_set == "smooth":
        b1 = np.stack([2 * t + 1, np.sin(t) + 2, np.cos(t) - 2])
        b2 = np.stack([2 * t - 1, np.cos(t) - 2, np.sin(t) + 3])
    elif coeff_set == "rough":
        b1 = np.stack([40 * t / (2 * t + 1), (t**2 + 3) / (t - 2), t + 3])
        b2 = np.stack([np.log(t + 1), t + 1, 3 * t**2 - 2])
    else:
        raise InvalidInputError(f"unknown coefficient set {coeff_set!r}")
    return b1, b2


def draw_errors(error_dist, size, rng) -> np.ndarray:
    """Bivariate error draws of shape ``(*size, 2)``."""
    size = tuple(np.atleast_1d(size))
    if error_dist == "I":
        return rng.normal(0.0, math.sqrt(0.8), size + (2,))
    if error_dist == "II":
        z = rng.normal(0.0, math.sqrt(0.8**5), size + (2,))
        return z / np.sqrt(rng.chisquare(3, size) / 3.0)[..., None]
    if error_dist == "III":
        a = rng.standard_normal(size + (5,)) ** 2
        return 0.8 * np.stack([a[..., :3].sum(-1), a[..., 2:].sum(-1)], axis=-1)
    raise InvalidInputError(f"unknown error distribution {error_dist!r}")


@dataclass
class SimConfig:
    coeff_set: str = "smooth"
    error_dist: str = "I"
    n: int = 200
    J: int = 50
    d: int = 100
    tau_levels: tuple = (0.05, 0.1, 0.2)
    probe: tuple = (1.0, 0.5, 0.7)
    replications: int = 20
    seed: int = 0
    degree: int = 3
    knot_count: int = 14
    knot_range: tuple = REPRODUCTION_KNOT_RANGE
    knots: tuple | None = None
    n_oracle: int = 5000
    coverage_mode: str = "residual"

    def __post_init__(self):
        if self.coeff_set not in COEFF_SETS:
            raise InvalidInputError(f"coeff_set must be one of {COEFF_SETS}")
        if self.error_dist not in ERROR_DISTS:
            raise InvalidInputError(f"error_dist must be one of {ERROR_DISTS}")
        if self.n < 4 or self.J < 2 or self.d < 3:
            raise InvalidInputError("need n >= p + 1 = 4, J >= 2 and d >= 3")
        self.tau_levels = tuple(float(t) for t in self.tau_levels)
        if not all(0 < t < 1 for t in self.tau_levels):
            raise InvalidInputError("quantile levels must lie in (0, 1)")
        self.probe = tuple(float(v) for v in self.probe)
        self.knot_range = tuple(float(v) for v in self.knot_range)
        if self.knots is not None:
            self.knots = tuple(float(v) for v in self.knots)
        if len(self.probe) != 3:
            raise InvalidInputError("probe is (X1, X2, t)")
        if self.coverage_mode not in ("residual", "local"):
            raise InvalidInputError("coverage_mode must be 'residual' or 'local'")

    @property
    def probe_x(self) -> np.ndarray:
        return np.array([1.0, self.probe[0], self.probe[1]])

    @property
    def probe_t(self) -> float:
        return self.probe[2]

    def basis(self) -> SplineBasis:
        if self.knots is not None:
            return build_basis(self.degree, self.knots)
        return build_basis(self.degree, evenly_spaced_knots(self.knot_count, *self.knot_range))

    def center(self, x=None, t=None) -> np.ndarray:
        """True conditional mean of the signal at covariates ``x`` and location ``t``."""
        x = self.probe_x if x is None else np.asarray(x, dtype=float)
        t = self.probe_t if t is None else t
        b1, b2 = true_coefficients(self.coeff_set, np.array([t]))
        return np.array([x @ b1[:, 0], x @ b2[:, 0]])


def _simulate(config: SimConfig, rep_seed):
    rng = rng_for(config.seed, 0, rep_seed) if not isinstance(rep_seed, np.random.Generator) else rep_seed
    n, J = config.n, config.J
    t = np.linspace(0.0, 1.0, J)
    x1 = rng.binomial(1, 0.5, n).astype(float)
    x2 = rng.uniform(0.0, 1.0, n)
    X = np.column_stack([np.ones(n), x1, x2])
    b1, b2 = true_coefficients(config.coeff_set, t)
    signal = np.stack([X @ b1, X @ b2], axis=-1)
    errors = draw_errors(config.error_dist, (n, J), rng)
    ids = tuple(f"s{i + 1:04d}" for i in range(n))
    return FunctionalDataset(t, signal + errors, X, ids), errors


def gen_dataset(config: SimConfig, rep_seed: int) -> FunctionalDataset:
    """Simulated dataset for replication ``rep_seed``; deterministic given the config seed."""
    return _simulate(config, rep_seed)[0]


def oracle_quantiles(config: SimConfig, x, t, tau, n_oracle=None, seed=None) -> np.ndarray:
    """Empirical directional ``tau``-quantiles of ``n_oracle`` responses drawn at ``(x, t)``."""
    n_oracle = n_oracle or config.n_oracle
    rng = seed if isinstance(seed, np.random.Generator) else rng_for(config.seed if seed is None else seed, 1, 0, 0)
    y = config.center(x, t) + draw_errors(config.error_dist, n_oracle, rng)
    proj = y @ DirectionGrid(config.d).directions.T
    return np.quantile(proj, tau, axis=0, method="inverted_cdf")


def analytic_coverage(dist, tau) -> float:
    """Population coverage of the all-direction envelope for spherical errors."""
    if dist == "gaussian":
        z = stats.norm.ppf(1 - tau)
        return float(1 - math.exp(-z * z / 2))
    if dist == "t3":
        z = stats.t.ppf(1 - tau, 3)
        return float(1 - (1 + z * z / 3) ** -1.5)
    raise InvalidInputError(f"no closed form for {dist!r}")


@dataclass
class ReplicationResult:
    replication: int
    ok: bool
    metrics: dict = field(default_factory=dict)
    error: str = ""


def _coverage_points(config, data, errors):
    if config.coverage_mode == "residual":
        return config.center() + errors.reshape(-1, 2)
    x1, x2, t = config.probe
    subj = (data.covariates[:, 1] == x1) & (np.abs(data.covariates[:, 2] - x2) <= 0.1)
    cols = np.abs(data.t_grid - t) <= 0.05
    pts = data.responses[subj][:, cols].reshape(-1, 2)
    if pts.size == 0:
        raise UndefinedMetricError("no observed points near the probe")
    return pts


def _safe_curvature(env):
    try:
        return curvature(env)
    except UndefinedMetricError:
        return float("nan")


def run_one(config: SimConfig, rep: int, ps_opts=None, admm_opts=None) -> ReplicationResult:
    ps_opts = ps_opts or PsOptions()
    admm_opts = admm_opts or AdmmOptions()
    try:
        data, errors = _simulate(config, rep)
        basis = config.basis()
        grid = DirectionGrid(config.d)
        points = _coverage_points(config, data, errors)
        metrics = {}
        for tau in config.tau_levels:
            initial, final, trace = run_multistage(data, basis, grid, tau, ps_opts, admm_opts)
            for label, fld in (("initial", initial), ("updated", final)):
                q = directional_quantiles(fld, basis, config.probe_x, config.probe_t)
                env = build_envelope(grid, q)
                metrics[(tau, "kappa", label)] = float("nan") if env.empty else _safe_curvature(env)
                metrics[(tau, "nu", label)] = coverage(grid, q, points)
            metrics[(tau, "stages", "updated")] = len(trace)
            metrics[(tau, "lambda", "initial")] = initial.lam
        return ReplicationResult(rep, True, metrics)
    except DqvcError as exc:
        logger.warning("replication %d failed: %s", rep, exc)
        return ReplicationResult(rep, False, error=str(exc))


def truth(config: SimConfig):
    """Oracle kappa and nu per quantile level from ``n_oracle`` draws at the probe."""
    grid = DirectionGrid(config.d)
    out = {}
    for i, tau in enumerate(config.tau_levels):
        q = oracle_quantiles(config, config.probe_x, config.probe_t, tau, seed=rng_for(config.seed, 1, i, 0))
        env = build_envelope(grid, q)
        fresh = config.center() + draw_errors(config.error_dist, config.n_oracle, rng_for(config.seed, 1, i, 1))
        out[(tau, "kappa")] = _safe_curvature(env)
        out[(tau, "nu")] = coverage(grid, q, fresh)
    return out


@dataclass
class Report:
    config: SimConfig
    rows: list
    failed: list
    replications: list = field(repr=False, default_factory=list)

    COLUMNS = (
        "coeff_set", "error", "tau", "metric", "truth",
        "initial_mean", "initial_sd", "updated_mean", "updated_sd",
    )

    def row(self, tau, metric) -> dict:
        for r in self.rows:
            if r["tau"] == tau and r["metric"] == metric:
                return r
        raise KeyError((tau, metric))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.COLUMNS)
        for r in self.rows:
            w.writerow([_fmt(r[c]) for c in self.COLUMNS])
        return buf.getvalue()

    def to_text(self) -> str:
        cfg = self.config
        lines = [
            f"coefficients={cfg.coeff_set} error={cfg.error_dist} n={cfg.n} J={cfg.J} d={cfg.d} "
            f"replications={len(self.replications) - len(self.failed)}/{len(self.replications)} seed={cfg.seed}",
            f"{'tau':>6} {'':>5} {'True':>8} {'Initial':>16} {'Updated':>16}",
        ]
        for r in self.rows:
            lines.append(
                f"{r['tau']:>6.3g} {r['metric']:>5} {r['truth']:>8.3f} "
                f"{r['initial_mean']:>8.3f}({r['initial_sd']:.3f}) {r['updated_mean']:>8.3f}({r['updated_sd']:.3f})"
            )
        if self.failed:
            lines.append(f"failed replications: {self.failed}")
        return "\n".join(lines) + "\n"


def _fmt(v):
    if isinstance(v, float):
        return f"{v:.6f}"
    return str(v)


def _summary(values):
    v = np.asarray([x for x in values if np.isfinite(x)], dtype=float)
    if v.size == 0:
        return float("nan"), float("nan")
    return float(v.mean()), float(v.std(ddof=1)) if v.size > 1 else 0.0


def run_replications(config: SimConfig, ps_opts=None, admm_opts=None, threads=1) -> Report:
    """Monte Carlo study at the probe point; deterministic given ``config.seed``."""
    if config.replications < 2:
        raise InvalidInputError("need at least 2 replications")
    reps = range(config.replications)
    args = (config, ps_opts, admm_opts)
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(_run_one_star, [(args, k) for k in reps]))
    else:
        results = [run_one(config, k, ps_opts, admm_opts) for k in reps]
    ok = [r for r in results if r.ok]
    failed = [r.replication for r in results if not r.ok]
    oracle = truth(config)
    rows = []
    for tau in config.tau_levels:
        for metric in ("kappa", "nu"):
            im, isd = _summary([r.metrics[(tau, metric, "initial")] for r in ok])
            um, usd = _summary([r.metrics[(tau, metric, "updated")] for r in ok])
            rows.append(
                {
                    "coeff_set": config.coeff_set,
                    "error": config.error_dist,
                    "tau": tau,
                    "metric": metric,
                    "truth": oracle[(tau, metric)],
                    "initial_mean": im,
                    "initial_sd": isd,
                    "updated_mean": um,
                    "updated_sd": usd,
                }
            )
    return Report(config, rows, failed, results)


def _run_one_star(packed):
    (config, ps_opts, admm_opts), k = packed
    return run_one(config, k, ps_opts, admm_opts)


def config_dict(config: SimConfig) -> dict:
    d = asdict(config)
    d["tau_levels"] = list(d["tau_levels"])
    d["probe"] = list(d["probe"])
    d["knot_range"] = list(d["knot_range"])
    if d["knots"] is not None:
        d["knots"] = [float(k) for k in d["knots"]]
    return d
