"""Batch command line: ``dqvc simulate | fit | envelope | reproduce``.

Exit codes: 0 success, 2 configuration error, 3 data validation error,
4 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from .admm import solve_pqr, write_trace_csv
from .config import FORMAT_VERSION, load_config, write_effective_config
from .envelope import build_envelope, directional_quantiles, write_envelopes_json, write_vertices_csv
from .exceptions import ConfigError, DataValidationError, DqvcError, InvalidInputError, NumericalError
from .ps import CoefficientField, full_penalty, projected_responses, run_multistage
from .quantile import DirectionGrid, design_matrix, read_dataset_csv, write_dataset_csv
from .reproduce import checks_csv, evaluate_checks, run_table1, table_csv, table_text
from .simulation import gen_dataset
from .splines import SplineBasis

logger = logging.getLogger("dqvc")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERICAL = 0, 2, 3, 4


def _outdir(cfg, flag):
    path = cfg.resolved_output_dir(flag)
    os.makedirs(path, exist_ok=True)
    return path


def cmd_simulate(args) -> int:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.simulation.seed = args.seed
    if args.replication is not None:
        cfg.simulation.replication = args.replication
    out = _outdir(cfg, args.out)
    data = gen_dataset(cfg.sim_config(), cfg.simulation.replication)
    path = os.path.join(out, "dataset.csv")
    write_dataset_csv(data, path)
    write_effective_config(cfg, out)
    logger.info("wrote %s (%d rows)", path, data.n * data.J)
    return EXIT_OK


def _fit_one(packed):
    data, basis, grid, tau, ps, admm = packed
    return run_multistage(data, basis, grid, tau, ps, admm)


def _trace_rows(trace):
    for rec in trace:
        for r in range(len(rec.frozen)):
            yield [rec.stage, r, int(bool(rec.frozen[r])), repr(float(rec.statistic[r]))]


def cmd_fit(args) -> int:
    cfg = load_config(args.config)
    if args.data:
        cfg.data.path = args.data
    if not cfg.data.path:
        raise ConfigError("no dataset given (use --data or data.path)")
    if args.tau:
        cfg.model.tau_levels = tuple(args.tau)
    out = _outdir(cfg, args.out)
    try:
        data = read_dataset_csv(cfg.data.path)
    except OSError as exc:
        raise DataValidationError(f"cannot read dataset {cfg.data.path}: {exc}") from exc
    basis = SplineBasis.from_dict(cfg.basis_spec())
    grid = DirectionGrid(cfg.model.d)
    jobs = [(data, basis, grid, tau, cfg.ps, cfg.admm) for tau in cfg.model.tau_levels]
    if args.threads > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=args.threads) as pool:
            results = list(pool.map(_fit_one, jobs))
    else:
        results = [_fit_one(j) for j in jobs]
    fields = []
    for tau, (initial, final, trace) in zip(cfg.model.tau_levels, results):
        fields.append({
            "tau": tau,
            "lambda": initial.lam,
            "initial": initial.to_dict(),
            "updated": final.to_dict(),
            "trace": [
                {"stage": r.stage, "frozen": [bool(f) for f in r.frozen],
                 "max_component_statistic": [float(s) for s in r.statistic], "newly_frozen": r.newly_frozen}
                for r in trace
            ],
        })
        with open(os.path.join(out, f"ps_trace_tau{tau:g}.csv"), "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["stage", "direction_index", "frozen", "max_component_statistic"])
            w.writerows(_trace_rows(trace))
    doc = {
        "format_version": FORMAT_VERSION,
        "effective_config": cfg.to_dict(),
        "grid": {"d": grid.d, "angles": grid.angles.tolist()},
        "basis": basis.to_dict(),
        "p": data.p,
        "fields": fields,
    }
    with open(os.path.join(out, "fit.json"), "w") as fh:
        json.dump(doc, fh)
    if args.admm_trace:
        _write_admm_trace(data, basis, grid, cfg, fields[0], os.path.join(out, "admm_trace.csv"))
    write_effective_config(cfg, out)
    logger.info("wrote fit for tau levels %s to %s", list(cfg.model.tau_levels), out)
    return EXIT_OK


def _write_admm_trace(data, basis, grid, cfg, fld, path):
    """Iteration history of the Stage I solve for direction 0 at the first quantile level."""
    X = design_matrix(data, basis)
    y = projected_responses(data, grid)[:, 0]
    trace = []
    solve_pqr(X, y, fld["tau"], fld["lambda"], full_penalty(basis, data.p), cfg.admm, trace=trace)
    write_trace_csv(trace, path)


def load_fit(path):
    """Read a fit artifact; returns ``(doc, basis, {tau: (initial, updated)})``."""
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read fit artifact {path}: {exc}") from exc
    basis = SplineBasis.from_dict(doc["basis"])
    fields = {
        float(f["tau"]): (CoefficientField.from_dict(f["initial"]), CoefficientField.from_dict(f["updated"]))
        for f in doc["fields"]
    }
    return doc, basis, fields


def cmd_envelope(args) -> int:
    cfg = load_config(args.config)
    out = _outdir(cfg, args.out)
    doc, basis, fields = load_fit(args.field)
    taus = args.tau or sorted(fields)
    missing = [t for t in taus if t not in fields]
    if missing:
        raise ConfigError(f"fit artifact has no field for tau {missing}; available {sorted(fields)}")
    if args.x is not None:
        x = np.asarray(args.x, dtype=float)
    else:
        x = np.concatenate([[1.0], cfg.simulation.probe[:2]])
    if args.t_sweep:
        ts = np.linspace(args.t_range[0], args.t_range[1], args.t_sweep)
    elif args.t is not None:
        ts = np.asarray(args.t, dtype=float)
    else:
        ts = np.array([cfg.simulation.probe[2]])
    envelopes = []
    for tau in taus:
        fld = fields[tau][0 if args.initial else 1]
        if x.size != fld.p:
            raise InvalidInputError(f"probe x has {x.size} entries but the fit has p = {fld.p}")
        for t in ts:
            q = directional_quantiles(fld, basis, x, t)
            env = build_envelope(fld.grid, q, tau=tau, t=float(t), x=x.tolist())
            if env.empty:
                logger.warning("empty envelope at tau=%g t=%g", tau, t)
            envelopes.append(env)
    extra = {
        "format_version": FORMAT_VERSION,
        "effective_config": cfg.to_dict(),
        "source_fit": os.path.basename(args.field),
        "stage": "initial" if args.initial else "updated",
    }
    write_envelopes_json(envelopes, os.path.join(out, "envelopes.json"), extra)
    write_vertices_csv(envelopes, os.path.join(out, "envelope_vertices.csv"))
    write_effective_config(cfg, out)
    logger.info("wrote %d envelopes to %s", len(envelopes), out)
    return EXIT_OK


def cmd_reproduce(args) -> int:
    cfg = load_config(args.config)
    if args.replications is not None:
        cfg.simulation.replications = args.replications
    if args.seed is not None:
        cfg.simulation.seed = args.seed
    out = _outdir(cfg, args.out)
    reports = run_table1(cfg, threads=args.threads, progress=logger.info)
    results = evaluate_checks(reports, cfg.reproduce.checks)
    stem = os.path.join(out, args.variant)
    with open(stem + ".csv", "w") as fh:
        fh.write(table_csv(reports))
    with open(stem + "_checks.csv", "w") as fh:
        fh.write(checks_csv(results))
    text = table_text(reports, results)
    with open(stem + ".txt", "w") as fh:
        fh.write(text)
    write_effective_config(cfg, out)
    print(text, end="")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dqvc", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, threads=False):
        sp.add_argument("--config", help="YAML run configuration")
        sp.add_argument("--out", help="output directory (overrides config and DQVC_OUTPUT_DIR)")
        if threads:
            sp.add_argument("--threads", type=int, default=1, help="maximum worker processes")

    sp = sub.add_parser("simulate", help="write a simulated dataset CSV")
    common(sp)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--replication", type=int)
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("fit", help="fit initial and smoothed coefficient fields")
    common(sp, threads=True)
    sp.add_argument("--data", help="dataset CSV (overrides data.path)")
    sp.add_argument("--tau", type=float, nargs="+")
    sp.add_argument("--admm-trace", action="store_true", help="also write an ADMM iteration trace")
    sp.set_defaults(func=cmd_fit)

    sp = sub.add_parser("envelope", help="evaluate envelopes from a fit artifact")
    common(sp)
    sp.add_argument("--field", required=True, help="fit.json from 'dqvc fit'")
    sp.add_argument("--x", type=float, nargs="+", help="covariate vector including the intercept")
    sp.add_argument("--t", type=float, nargs="+")
    sp.add_argument("--tau", type=float, nargs="+")
    sp.add_argument("--t-sweep", type=int, help="number of evenly spaced t values")
    sp.add_argument("--t-range", type=float, nargs=2, default=(0.0, 1.0))
    sp.add_argument("--initial", action="store_true", help="use the per-direction fit")
    sp.set_defaults(func=cmd_envelope)

    sp = sub.add_parser("reproduce", help="run the simulation study and grade it")
    sp.add_argument("variant", choices=["table1"])
    common(sp, threads=True)
    sp.add_argument("--replications", type=int)
    sp.add_argument("--seed", type=int)
    sp.set_defaults(func=cmd_reproduce)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    if getattr(args, "threads", 1) < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return args.func(args)
    except DataValidationError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        for row in exc.rows[:20]:
            print(f"  line {row}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (ConfigError, DqvcError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
