"""Run configuration: one YAML file with a fixed set of sections and keys.

Sections and their defaults::

    basis:       degree, knot_count, knot_range, knots
                 (fits default to knots splitting [0, 1] evenly; simulations
                 and reproductions default to the range [.02, .93])
    model:       d, tau_levels
    ps:          h, C, c0, alpha, lambda_grid, cv_folds, cv_directions, lam, cn, cn_basis
    admm:        rho, eps_abs, eps_rel, max_iters, paper_exact_tolerances
    simulation:  coeff_set, error_dist, n, J, probe, replications, seed,
                 n_oracle, coverage_mode, replication
    reproduce:   variant, coeff_sets, error_dists, checks
    data:        path
    output_dir:  directory for all artifacts

Unknown sections or keys are rejected. The ``DQVC_OUTPUT_DIR`` environment
variable overrides ``output_dir``; command-line flags override both.
"""

from __future__ import annotations

import os
from dataclasses import asdict, dataclass, field, fields, is_dataclass

import yaml

from .admm import AdmmOptions
from .exceptions import ConfigError, InvalidInputError
from .ps import PsOptions
from .simulation import REPRODUCTION_KNOT_RANGE, SimConfig

FORMAT_VERSION = 1
ENV_OUTPUT_DIR = "DQVC_OUTPUT_DIR"


@dataclass
class BasisConfig:
    degree: int = 3
    knot_count: int = 14
    knot_range: tuple | None = None
    knots: tuple | None = None

    def __post_init__(self):
        if self.knot_range is not None:
            if len(self.knot_range) != 2:
                raise InvalidInputError("knot_range must be [lo, hi]")
            self.knot_range = tuple(float(v) for v in self.knot_range)
        if self.knots is not None:
            self.knots = tuple(float(v) for v in self.knots)


@dataclass
class ModelConfig:
    d: int = 100
    tau_levels: tuple = (0.05, 0.1, 0.2)

    def __post_init__(self):
        if self.d < 3:
            raise InvalidInputError("d must be at least 3")
        self.tau_levels = tuple(float(t) for t in self.tau_levels)
        if not self.tau_levels or not all(0 < t < 1 for t in self.tau_levels):
            raise InvalidInputError("tau_levels must be a nonempty list in (0, 1)")


@dataclass
class SimulationConfig:
    coeff_set: str = "smooth"
    error_dist: str = "I"
    n: int = 200
    J: int = 50
    probe: tuple = (1.0, 0.5, 0.7)
    replications: int = 20
    seed: int = 0
    n_oracle: int = 5000
    coverage_mode: str = "residual"
    replication: int = 0


def default_checks() -> list:
    """Pass/fail targets of the Table 1 reproduction."""
    checks = []
    for error, tau, target in (
        ("I", 0.05, 0.740), ("I", 0.1, 0.560), ("I", 0.2, 0.298), ("II", 0.05, 0.790), ("II", 0.1, 0.620),
    ):
        for coeff in ("smooth", "rough"):
            checks.append({
                "kind": "truth_nu", "coeff_set": coeff, "error": error, "tau": tau,
                "target": target, "tolerance": 0.02,
            })
    checks += [
        {"kind": "initial_nu", "coeff_set": "smooth", "error": "I", "tau": 0.05, "target": 0.742, "tolerance": 0.03},
        {"kind": "updated_nu", "coeff_set": "smooth", "error": "I", "tau": 0.05, "target": 0.741, "tolerance": 0.03},
        {"kind": "sd_nu_not_increased", "coeff_set": "smooth", "error": "I", "tau": 0.05},
        {"kind": "kappa_not_increased", "coeff_set": "smooth", "error": "I", "tau": 0.05},
    ]
    for coeff in ("smooth", "rough"):
        for error in ("I", "II", "III"):
            checks.append({"kind": "truth_kappa_increasing", "coeff_set": coeff, "error": error})
    return checks


CHECK_KINDS = (
    "truth_nu", "initial_nu", "updated_nu", "sd_nu_not_increased", "kappa_not_increased", "truth_kappa_increasing",
)


@dataclass
class ReproduceConfig:
    variant: str = "table1"
    coeff_sets: tuple = ("smooth", "rough")
    error_dists: tuple = ("I", "II", "III")
    checks: list = field(default_factory=default_checks)

    def __post_init__(self):
        if self.variant != "table1":
            raise InvalidInputError(f"unknown reproduction variant {self.variant!r}")
        self.coeff_sets = tuple(self.coeff_sets)
        self.error_dists = tuple(self.error_dists)
        for c in self.checks:
            if not isinstance(c, dict) or c.get("kind") not in CHECK_KINDS:
                raise InvalidInputError(f"check entries need a kind in {CHECK_KINDS}, got {c!r}")


@dataclass
class DataConfig:
    path: str | None = None


@dataclass
class RunConfig:
    basis: BasisConfig = field(default_factory=BasisConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    ps: PsOptions = field(default_factory=PsOptions)
    admm: AdmmOptions = field(default_factory=AdmmOptions)
    simulation: SimulationConfig = field(default_factory=SimulationConfig)
    reproduce: ReproduceConfig = field(default_factory=ReproduceConfig)
    data: DataConfig = field(default_factory=DataConfig)
    output_dir: str = "out"

    def sim_config(self, **overrides) -> SimConfig:
        s = self.simulation
        kw = dict(
            coeff_set=s.coeff_set, error_dist=s.error_dist, n=s.n, J=s.J, d=self.model.d,
            tau_levels=self.model.tau_levels, probe=s.probe, replications=s.replications, seed=s.seed,
            degree=self.basis.degree, knot_count=self.basis.knot_count,
            knot_range=self.basis.knot_range or REPRODUCTION_KNOT_RANGE,
            knots=self.basis.knots, n_oracle=s.n_oracle, coverage_mode=s.coverage_mode,
        )
        kw.update(overrides)
        return SimConfig(**kw)

    def basis_spec(self) -> dict:
        return asdict(self.basis)

    def resolved_output_dir(self, flag=None) -> str:
        if flag:
            return flag
        return os.environ.get(ENV_OUTPUT_DIR) or self.output_dir

    def to_dict(self) -> dict:
        out = {"format_version": FORMAT_VERSION}
        for f in fields(self):
            v = getattr(self, f.name)
            out[f.name] = _plain(asdict(v) if is_dataclass(v) else v)
        return out


SECTIONS = {
    "basis": BasisConfig,
    "model": ModelConfig,
    "ps": PsOptions,
    "admm": AdmmOptions,
    "simulation": SimulationConfig,
    "reproduce": ReproduceConfig,
    "data": DataConfig,
}


def _plain(v):
    if isinstance(v, dict):
        return {k: _plain(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_plain(x) for x in v]
    return v


def _key_lines(text) -> dict:
    """Line number (1-based) of every ``section.key`` in the document."""
    lines = {}
    try:
        root = yaml.compose(text, Loader=yaml.SafeLoader)
    except yaml.YAMLError:
        return lines
    if not isinstance(root, yaml.MappingNode):
        return lines
    for k, v in root.value:
        lines[(k.value,)] = k.start_mark.line + 1
        if isinstance(v, yaml.MappingNode):
            for kk, _ in v.value:
                lines[(k.value, kk.value)] = kk.start_mark.line + 1
    return lines


def _where(lines, *path):
    line = lines.get(tuple(path))
    return f" (line {line})" if line else ""


def _check_type(name, value, default, where):
    if default is None or value is None:
        return value
    ok = True
    if isinstance(default, bool):
        ok = isinstance(value, bool)
    elif isinstance(default, int):
        ok = isinstance(value, int) and not isinstance(value, bool)
    elif isinstance(default, float):
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
        value = float(value) if ok else value
    elif isinstance(default, str):
        ok = isinstance(value, str)
    elif isinstance(default, (tuple, list)):
        ok = isinstance(value, list)
    if not ok:
        raise ConfigError(f"{name}{where}: expected {type(default).__name__}, got {value!r}")
    return value


def _build(cls, section, raw, lines):
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError(f"section '{section}'{_where(lines, section)} must be a mapping")
    known = {f.name: f for f in fields(cls)}
    proto = cls()
    kwargs = {}
    for key, value in raw.items():
        if key not in known:
            raise ConfigError(f"unknown key '{section}.{key}'{_where(lines, section, key)}")
        kwargs[key] = _check_type(f"{section}.{key}", value, getattr(proto, key), _where(lines, section, key))
    try:
        return cls(**kwargs)
    except (InvalidInputError, TypeError, ValueError) as exc:
        raise ConfigError(f"section '{section}'{_where(lines, section)}: {exc}") from exc


def parse_config(text: str, source: str = "<config>") -> RunConfig:
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f" line {mark.line + 1}, column {mark.column + 1}" if mark else ""
        raise ConfigError(f"{source}:{where} cannot parse YAML: {getattr(exc, 'problem', exc)}") from exc
    if doc is None:
        doc = {}
    if not isinstance(doc, dict):
        raise ConfigError(f"{source}: top level must be a mapping")
    lines = _key_lines(text)
    doc.pop("format_version", None)
    kwargs = {}
    for key, value in doc.items():
        if key in SECTIONS:
            kwargs[key] = _build(SECTIONS[key], key, value, lines)
        elif key == "output_dir":
            if not isinstance(value, str):
                raise ConfigError(f"output_dir{_where(lines, key)} must be a string")
            kwargs[key] = value
        else:
            raise ConfigError(f"{source}: unknown key '{key}'{_where(lines, key)}")
    return RunConfig(**kwargs)


def load_config(path=None) -> RunConfig:
    """Read ``path``; ``None`` gives all defaults."""
    if path is None:
        return RunConfig()
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text, str(path))


def dump_config(cfg: RunConfig) -> str:
    return yaml.safe_dump(cfg.to_dict(), sort_keys=False)


def write_effective_config(cfg: RunConfig, directory) -> str:
    path = os.path.join(directory, "effective_config.yaml")
    with open(path, "w") as fh:
        fh.write(dump_config(cfg))
    return path
