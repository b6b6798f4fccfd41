"""Command-line entry point: ``ocbau {oracle,run,rate-dump,compare}``.

Options may also come from a JSON file given with ``--config``; keys are
the long option names with dashes or underscores, and explicit flags win.
Exit codes: 0 success, 2 configuration error, 3 solver error, 4 I/O error.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys

import numpy as np

from . import __version__
from .core import Allocation, ProblemInstance, make_instance
from .errors import ConfigurationError, DomainError, EstimationError, SolverError
from .oracle import known_variance_allocation, ocba_approx_allocation, optimal_allocation
from .rate import PairParams, g_value, pairwise_rates, phi_minimizers, bayes_rate, glynn_rate
from .sequential import PolicyKind
from .simulate import DEFAULT_PFS_SAMPLES, DEFAULT_REPS, ExperimentConfig, MacroSummary, run_macroreps
from .tables import csv_text, json_text

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_SOLVER = 3
EXIT_IO = 4

SEED_ENV = "OCBAU_SEED"
EXAMPLE_PAIR = (0.0, 1.0, 10.0, 1.0)

# defaults applied after merging the config file and the flags
DEFAULTS = {
    "instance": None,
    "instance_file": None,
    "k": 10,
    "output": "-",
    "format": "csv",
    "seed": None,
    "policies": "all",
    "budget": 2000,
    "n0": 3,
    "checkpoints": "",
    "reps": DEFAULT_REPS,
    "pfs_samples": DEFAULT_PFS_SAMPLES,
    "common_streams": False,
    "workers": None,
    "trajectories": None,
    "tol": 1e-9,
    "pair": None,
    "r": "0.9,1,1.1",
    "phi_points": 201,
    "sweep": "0.5:1.5:0.01",
    "summary": None,
}

_COMMANDS = {
    "oracle": {"instance", "instance_file", "k", "output", "format", "tol"},
    "run": {"instance", "instance_file", "k", "output", "format", "seed", "policies", "budget", "n0",
            "checkpoints", "reps", "pfs_samples", "common_streams", "workers", "trajectories"},
    "rate-dump": {"output", "format", "pair", "r", "phi_points", "sweep"},
    "compare": {"instance", "instance_file", "k", "output", "format", "seed", "policies", "budget", "n0",
                "checkpoints", "reps", "pfs_samples", "common_streams", "workers", "tol", "summary"},
}


def _add_output(p):
    p.add_argument("-o", "--output", help="output path, '-' for stdout (default)")
    p.add_argument("--format", choices=("csv", "json"))


def _add_instance(p):
    g = p.add_mutually_exclusive_group()
    g.add_argument("--instance", type=int, help="built-in instance id 1..6")
    g.add_argument("--instance-file", help='JSON file {"means": [...], "variances": [...]}')
    p.add_argument("--k", type=int, help="number of designs for instances 1-4 (default 10)")


def _add_experiment(p):
    p.add_argument("--policies", help="comma-separated subset of ocba-u,ocba-k,ei,equal, or 'all'")
    p.add_argument("--budget", type=int)
    p.add_argument("--n0", type=int)
    p.add_argument("--checkpoints", help="comma-separated checkpoint budgets; the budget is always included")
    p.add_argument("--reps", type=int, help="number of macroreplications")
    p.add_argument("--pfs-samples", type=int, help="posterior draws per Bayesian PFS estimate")
    p.add_argument("--seed", type=int, help=f"base seed (default ${SEED_ENV} or 0)")
    p.add_argument("--common-streams", action="store_true", default=None,
                   help="share one observation stream across policies within a replication")
    p.add_argument("--workers", type=int, help="worker processes (default: number of cores)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ocbau", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("oracle", help="optimal, known-variance, OCBA and equal allocations")
    _add_instance(p)
    p.add_argument("--tol", type=float)
    p.add_argument("--config", help="JSON file with option values")
    _add_output(p)

    p = sub.add_parser("run", help="macroreplication experiment")
    _add_instance(p)
    _add_experiment(p)
    p.add_argument("--trajectories", help="also write every run as JSON lines to this path")
    p.add_argument("--config", help="JSON file with option values")
    _add_output(p)

    p = sub.add_parser("rate-dump", help="inner objective curves and minimizer sweep")
    p.add_argument("--pair", help="mu_i,var_i,mu_star,var_star (default 0,1,10,1)")
    p.add_argument("--r", help="comma-separated r values for curve blocks")
    p.add_argument("--phi-points", type=int, help="grid points per curve")
    p.add_argument("--sweep", help="lo:hi:step for the minimizer sweep")
    p.add_argument("--config", help="JSON file with option values")
    _add_output(p)

    p = sub.add_parser("compare", help="distance to the optimal allocation and PFS by policy")
    _add_instance(p)
    _add_experiment(p)
    p.add_argument("--tol", type=float)
    p.add_argument("--summary", help="JSON summary from a previous 'run' (otherwise runs inline)")
    p.add_argument("--config", help="JSON file with option values")
    _add_output(p)
    return parser


def _load_config(path: str, command: str) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise OSError(f"cannot read config {path}: {exc.strerror or exc}") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"{path}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc
    if not isinstance(data, dict):
        raise ConfigurationError(f"{path}: top level must be a JSON object")
    out = {}
    allowed = _COMMANDS[command]
    for key, value in data.items():
        name = key.replace("-", "_")
        if name not in allowed:
            raise ConfigurationError(f"{path}: field {key!r} is not an option of '{command}'")
        if isinstance(value, list):
            value = ",".join(str(v) for v in value)
        out[name] = value
    return out


def merge_options(args: argparse.Namespace) -> dict:
    """Defaults < config file < explicit flags."""
    opts = {k: v for k, v in DEFAULTS.items() if k in _COMMANDS[args.command]}
    if getattr(args, "config", None):
        opts.update(_load_config(args.config, args.command))
    for key in _COMMANDS[args.command]:
        value = getattr(args, key, None)
        if value is not None:
            opts[key] = value
    # an instance selector given as a flag replaces whichever one the config file named
    if getattr(args, "instance", None) is not None:
        opts["instance_file"] = None
    elif getattr(args, "instance_file", None) is not None:
        opts["instance"] = None
    elif opts.get("instance") is not None and opts.get("instance_file"):
        raise ConfigurationError("config sets both 'instance' and 'instance_file'; choose one")
    return opts


def _int_list(text, field: str) -> list[int]:
    if text in (None, ""):
        return []
    try:
        return [int(x) for x in str(text).split(",") if x.strip()]
    except ValueError as exc:
        raise ConfigurationError(f"{field}: expected comma-separated integers, got {text!r}") from exc


def _float_list(text, field: str) -> list[float]:
    try:
        return [float(x) for x in str(text).split(",") if x.strip()]
    except ValueError as exc:
        raise ConfigurationError(f"{field}: expected comma-separated numbers, got {text!r}") from exc


def _coerce_int(opts: dict, key: str) -> int:
    value = opts[key]
    if isinstance(value, bool) or not isinstance(value, (int, str)):
        raise ConfigurationError(f"{key}: expected an integer, got {value!r}")
    try:
        return int(value)
    except ValueError as exc:
        raise ConfigurationError(f"{key}: expected an integer, got {value!r}") from exc


def resolve_instance(opts: dict) -> ProblemInstance:
    path = opts.get("instance_file")
    if path:
        try:
            with open(path, encoding="utf-8") as fh:
                text = fh.read()
        except OSError as exc:
            raise OSError(f"cannot read instance file {path}: {exc.strerror or exc}") from exc
        try:
            return ProblemInstance.from_json(text, name=os.path.basename(path))
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise ConfigurationError(f"instance file {path}: {exc}") from exc
    if opts.get("instance") is None:
        raise ConfigurationError("one of --instance or --instance-file is required")
    return make_instance(_coerce_int(opts, "instance"), _coerce_int(opts, "k"))


def resolve_policies(text) -> tuple[PolicyKind, ...]:
    if str(text).strip().lower() == "all":
        return tuple(PolicyKind)
    return tuple(PolicyKind.parse(p) for p in str(text).split(",") if p.strip())


def resolve_seed(opts: dict) -> int:
    if opts.get("seed") is not None:
        return _coerce_int(opts, "seed")
    env = os.environ.get(SEED_ENV)
    if env:
        try:
            return int(env)
        except ValueError as exc:
            raise ConfigurationError(f"${SEED_ENV}: expected an integer, got {env!r}") from exc
    return 0


def _experiment(opts: dict, inst: ProblemInstance) -> ExperimentConfig:
    return ExperimentConfig(
        instance=inst,
        policies=resolve_policies(opts["policies"]),
        budget=_coerce_int(opts, "budget"),
        n0=_coerce_int(opts, "n0"),
        checkpoints=tuple(_int_list(opts["checkpoints"], "checkpoints")),
        reps=_coerce_int(opts, "reps"),
        pfs_samples=_coerce_int(opts, "pfs_samples"),
        seed=resolve_seed(opts),
        common_streams=bool(opts["common_streams"]),
    )


def _workers(opts: dict) -> int:
    if opts.get("workers") is None:
        return os.cpu_count() or 1
    w = _coerce_int(opts, "workers")
    if w < 1:
        raise ConfigurationError("workers must be at least 1")
    return w


def _emit(opts: dict, text: str) -> None:
    path = opts["output"]
    if path == "-":
        sys.stdout.write(text)
        sys.stdout.flush()
        return
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)


def _check_format(opts: dict) -> str:
    fmt = opts["format"]
    if fmt not in ("csv", "json"):
        raise ConfigurationError(f"format: expected 'csv' or 'json', got {fmt!r}")
    return fmt


# ---------------------------------------------------------------- oracle

ORACLE_HEADER = ("design", "mean", "variance", "alpha_star", "alpha_known", "alpha_ocba", "alpha_equal",
                 "v_star", "v_known", "v_ocba", "v_equal")


def oracle_table(inst: ProblemInstance, tol: float = 1e-9) -> dict:
    """Allocations, per-design pairwise rates and achieved rates for one instance."""
    star = optimal_allocation(inst, tol)
    known = known_variance_allocation(inst, tol)
    allocs = {
        "star": star.alloc,
        "known": known.alloc,
        "ocba": ocba_approx_allocation(inst),
        "equal": Allocation.equal(inst.k),
    }
    b = inst.best
    pair_rates = {}
    for name, alloc in allocs.items():
        rates = iter(pairwise_rates(alloc, inst))
        pair_rates[name] = [None if i == b else next(rates) for i in range(inst.k)]
    rows = []
    for i in range(inst.k):
        rows.append([i + 1, inst.means[i], inst.variances[i]]
                    + [allocs[n][i] for n in ("star", "known", "ocba", "equal")]
                    + [pair_rates[n][i] for n in ("star", "known", "ocba", "equal")])
    return {
        "instance": inst.to_dict(),
        "best": b + 1,
        "header": list(ORACLE_HEADER),
        "rows": rows,
        "rate": {n: bayes_rate(a, inst) for n, a in allocs.items()},
        "known_variance_rate": {n: glynn_rate(a, inst) for n, a in allocs.items()},
        "residuals": {"star": star.residuals, "known": known.residuals},
    }


def cmd_oracle(opts: dict) -> int:
    fmt = _check_format(opts)
    table = oracle_table(resolve_instance(opts), float(opts["tol"]))
    if fmt == "csv":
        _emit(opts, csv_text(ORACLE_HEADER, table["rows"]))
    else:
        _emit(opts, json_text(table))
    return EXIT_OK


# ---------------------------------------------------------------- run

def cmd_run(opts: dict) -> int:
    fmt = _check_format(opts)
    cfg = _experiment(opts, resolve_instance(opts))
    workers = _workers(opts)
    sink = None
    traj_fh = None
    if opts.get("trajectories"):
        traj_fh = open(opts["trajectories"], "w", encoding="utf-8")

        def sink(kind, rep, traj):
            traj_fh.write(json.dumps({"rep": rep, **traj}) + "\n")
    try:
        summary = run_macroreps(cfg, workers=workers, trajectory_sink=sink)
    finally:
        if traj_fh is not None:
            traj_fh.close()
    _emit(opts, summary.to_csv() if fmt == "csv" else summary.to_json())
    return EXIT_OK


# ---------------------------------------------------------------- rate-dump

RATE_HEADER = ("block", "r", "phi", "g", "phi_min", "phi_max", "w", "degenerate")


def _sweep_values(text: str) -> list[float]:
    try:
        lo, hi, step = (float(x) for x in str(text).split(":"))
    except ValueError as exc:
        raise ConfigurationError(f"sweep: expected lo:hi:step, got {text!r}") from exc
    if not (step > 0 and hi >= lo >= 0):
        raise ConfigurationError("sweep: need 0 <= lo <= hi and step > 0")
    n = int(math.floor((hi - lo) / step + 1e-9)) + 1
    return [round(lo + j * step, 12) for j in range(n)]


def rate_dump_rows(pair: PairParams, r_values, phi_points: int, sweep) -> list[list]:
    """Rows for ``curve`` blocks (phi, g), their ``minimizer`` rows and the ``sweep`` block."""
    if phi_points < 2:
        raise ConfigurationError("phi_points must be at least 2")
    pad = 0.1 * pair.gap
    grid = np.linspace(pair.mu_i - pad, pair.mu_star + pad, phi_points)
    rows = []
    for r in r_values:
        if r < 0:
            raise ConfigurationError(f"r values must be nonnegative, got {r}")
        for phi in grid:
            rows.append(["curve", r, float(phi), g_value(float(phi), r, pair), None, None, None, None])
        m = phi_minimizers(r, pair)
        rows.append(["minimizer", r, None, None, m.phi_min, m.phi_max, m.w_value, m.is_degenerate])
    for r in sweep:
        m = phi_minimizers(r, pair)
        rows.append(["sweep", r, None, None, m.phi_min, m.phi_max, m.w_value, m.is_degenerate])
    return rows


def cmd_rate_dump(opts: dict) -> int:
    fmt = _check_format(opts)
    vals = _float_list(opts["pair"], "pair") if opts.get("pair") else list(EXAMPLE_PAIR)
    if len(vals) != 4:
        raise ConfigurationError("pair: expected four numbers mu_i,var_i,mu_star,var_star")
    try:
        pair = PairParams(*vals)
    except DomainError as exc:
        raise ConfigurationError(f"pair: {exc}") from exc
    rows = rate_dump_rows(pair, _float_list(opts["r"], "r"), _coerce_int(opts, "phi_points"),
                          _sweep_values(opts["sweep"]))
    if fmt == "csv":
        _emit(opts, csv_text(RATE_HEADER, rows))
    else:
        _emit(opts, json_text({"pair": vals, "header": list(RATE_HEADER), "rows": rows}))
    return EXIT_OK


# ---------------------------------------------------------------- compare

COMPARE_HEADER = ("policy", "checkpoint", "distance", "pfs_bayes", "pfs_bayes_se", "pfs_freq", "pfs_freq_se")


def compare_rows(summary: MacroSummary, alpha_star) -> list[list]:
    """Final-checkpoint sup-norm distance to ``alpha_star`` and PFS for every policy."""
    rows = []
    for kind in summary.policies:
        r = summary.final(kind)
        dist = max(abs(a - b) for a, b in zip(r.proportions, alpha_star))
        rows.append([kind.value, r.checkpoint, dist, r.pfs_bayes, r.pfs_bayes_se, r.pfs_freq, r.pfs_freq_se])
    return rows


def cmd_compare(opts: dict) -> int:
    fmt = _check_format(opts)
    inst = resolve_instance(opts)
    star = optimal_allocation(inst, float(opts["tol"]))
    if opts.get("summary"):
        path = opts["summary"]
        try:
            with open(path, encoding="utf-8") as fh:
                data = json.load(fh)
        except OSError as exc:
            raise OSError(f"cannot read summary {path}: {exc.strerror or exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"{path}: line {exc.lineno}: {exc.msg}") from exc
        try:
            summary = MacroSummary.from_dict(data)
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigurationError(f"{path}: not a run summary ({exc})") from exc
        if any(len(r.proportions) != inst.k for r in summary.rows):
            raise ConfigurationError(f"{path}: summary has a different number of designs than the instance")
    else:
        summary = run_macroreps(_experiment(opts, inst), workers=_workers(opts))
    rows = compare_rows(summary, star.alphas)
    if fmt == "csv":
        _emit(opts, csv_text(COMPARE_HEADER, rows))
    else:
        _emit(opts, json_text({"alpha_star": list(star.alphas),
                               "rows": [dict(zip(COMPARE_HEADER, row)) for row in rows]}))
    return EXIT_OK


HANDLERS = {"oracle": cmd_oracle, "run": cmd_run, "rate-dump": cmd_rate_dump, "compare": cmd_compare}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        opts = merge_options(args)
        return HANDLERS[args.command](opts)
    except (ConfigurationError, DomainError) as exc:
        print(f"ocbau {args.command}: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (SolverError, EstimationError) as exc:
        print(f"ocbau {args.command}: solver error: {exc}", file=sys.stderr)
        report = getattr(exc, "report", None)
        if report:
            print(json_text(report), file=sys.stderr, end="")
        return EXIT_SOLVER
    except OSError as exc:
        print(f"ocbau {args.command}: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
