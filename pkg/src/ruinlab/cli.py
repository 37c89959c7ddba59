"""Command-line interface: ``ruinlab {ruin,simulate,markov,reproduce,sweep}``.

Settings are resolved in this order (later wins): built-in defaults, the
``--config`` file (JSON or YAML), then command-line flags.  Everything is
validated before any computation starts.

Exit codes: 0 success, 1 validation/usage error, 2 reproduction diffs beyond
tolerance under ``reproduce --strict``.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from pathlib import Path
from typing import Any, Optional, Sequence

import numpy as np
import yaml

from . import claims
from .bonus_malus import (
    PremiumScale,
    Principle,
    RuleSet,
    expected_premium,
    level_labels,
    stationary_distribution,
    transition_matrix,
)
from .errors import EnumerationBudgetError, NonHomogeneousChainError, ReducibleChainError, ValidationError
from .experiments import CATALOG, reproduce_all
from .mc_oracle import default_workers, simulate
from .ruin_engine import RuinQuery, ruin_probability, write_grid_csv

log = logging.getLogger("ruinlab")

DEFAULTS: dict[str, Any] = {
    "principle": "aggregate_reported",
    "distribution": "H",
    "q": 0.2,
    "scale": list(CATALOG.scale.levels),
    "level0": CATALOG.level0,
    "horizon": CATALOG.horizon,
    "u0": 0,
    "emit": "value",
}
DEFAULT_SWEEP_BUDGET = 10_000


class UsageError(Exception):
    """Raised instead of exiting when argument parsing fails."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


# -- helpers ----------------------------------------------------------------


def _fmt(full_precision: bool) -> str:
    return "{:.17g}" if full_precision else "{:.6g}"


def _int_list(text: str) -> list[int]:
    """``"0:100:10"`` (inclusive range) or ``"0,10,20"``."""
    text = text.strip()
    if ":" in text:
        parts = [int(p) for p in text.split(":")]
        if len(parts) not in (2, 3):
            raise argparse.ArgumentTypeError(f"bad range {text!r}; use start:stop[:step]")
        start, stop = parts[0], parts[1]
        step = parts[2] if len(parts) == 3 else 1
        if step < 1:
            raise argparse.ArgumentTypeError("range step must be >= 1")
        return list(range(start, stop + 1, step))
    try:
        return [int(p) for p in text.split(",") if p.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected integers, got {text!r}") from None


def _float_list(text: str) -> list[float]:
    try:
        return [float(p) for p in text.split(",") if p.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected numbers, got {text!r}") from None


def _load_config(path: Optional[str]) -> dict:
    if path is None:
        return {}
    p = Path(path)
    if not p.is_file():
        raise ValidationError(f"config file not found: {path}")
    try:
        data = yaml.safe_load(p.read_text())
    except yaml.YAMLError as exc:
        raise ValidationError(f"cannot parse {path}: {exc}") from None
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ValidationError(f"{path}: top level must be a mapping")
    return data


def _merge(args: argparse.Namespace, keys: Sequence[str]) -> dict:
    """Defaults < config file < flags (flags left at ``None`` do not override)."""
    cfg = dict(DEFAULTS)
    cfg.update(_load_config(getattr(args, "config", None)))
    for key in keys:
        value = getattr(args, key, None)
        if value is not None:
            cfg[key] = value
    if getattr(args, "truncation_epsilon", None) is not None:
        cfg["truncation_epsilon"] = args.truncation_epsilon
    return cfg


def _distribution(ref, eps: Optional[float]) -> claims.JointClaimPMF:
    if isinstance(ref, str):
        key = ref.upper()
        if key not in claims.BUILTIN:
            raise ValidationError(f"unknown built-in distribution {ref!r} (use H, M, L or a mapping)")
        return claims.BUILTIN[key](**({} if eps is None else {"truncation_epsilon": eps}))
    if isinstance(ref, dict):
        ref = dict(ref)
        if eps is not None:
            ref["truncation_epsilon"] = eps
    return claims.from_config(ref)


def _rules(cfg: dict, principle: Principle, n_levels: int) -> RuleSet:
    if cfg.get("rules") is None:
        a, b = CATALOG.count_thresholds if principle.is_count else CATALOG.aggregate_thresholds
        return RuleSet.threshold(a, b, n_levels)
    if not isinstance(cfg["rules"], dict):
        raise ValidationError("rules must be a mapping")
    return RuleSet.from_config(cfg["rules"], n_levels)


def _scale(value) -> PremiumScale:
    if isinstance(value, str):
        value = _int_list(value)
    try:
        return PremiumScale(tuple(int(c) for c in value))
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ValidationError):
            raise
        raise ValidationError(f"scale must be a list of integers, got {value!r}") from None


def _int_field(cfg, key) -> int:
    value = cfg.get(key)
    try:
        if int(value) != float(value):
            raise ValueError
        return int(value)
    except (TypeError, ValueError):
        raise ValidationError(f"{key} must be an integer, got {value!r}") from None


def _float_field(cfg, key) -> float:
    try:
        return float(cfg.get(key))
    except (TypeError, ValueError):
        raise ValidationError(f"{key} must be a number, got {cfg.get(key)!r}") from None


def build_query(cfg: dict, emit_grid: bool = False) -> RuinQuery:
    principle = Principle.parse(cfg.get("principle"))
    scale = _scale(cfg.get("scale"))
    dist = _distribution(cfg.get("distribution"), cfg.get("truncation_epsilon"))
    return RuinQuery(
        principle,
        dist,
        _float_field(cfg, "q"),
        scale,
        _rules(cfg, principle, len(scale)),
        _int_field(cfg, "u0"),
        _int_field(cfg, "level0"),
        _int_field(cfg, "horizon"),
        emit_grid=emit_grid,
    )


class _Output:
    """Writes to ``--out`` or stdout."""

    def __init__(self, path: Optional[str]):
        self.path = path

    def write(self, text: str):
        if self.path is None:
            sys.stdout.write(text)
        else:
            Path(self.path).write_text(text)


# -- subcommands --------------------------------------------------------------

QUERY_KEYS = ("principle", "distribution", "q", "scale", "u0", "level0", "horizon", "emit")


def cmd_ruin(args) -> int:
    cfg = _merge(args, QUERY_KEYS)
    emit = cfg.get("emit", "value")
    if emit not in ("value", "grid"):
        raise ValidationError(f"emit must be 'value' or 'grid', got {emit!r}")
    query = build_query(cfg, emit_grid=(emit == "grid"))
    result = ruin_probability(query)
    log.info("solved in %.3fs", result.metadata.get("seconds", 0.0))
    fmt = _fmt(args.full_precision)
    out = _Output(args.out)
    if emit == "value":
        if args.format == "json":
            payload = {"psi": float(fmt.format(result.value)), "truncation_bound": result.truncation_bound,
                       "query": query.echo()}
            out.write(json.dumps(payload, indent=2) + "\n")
        else:
            out.write(fmt.format(result.value) + "\n")
        return 0
    if args.format == "json":
        rows = []
        for layer in result.table:
            for i in range(1, len(query.scale) + 1):
                curve = layer.psi_curve(i, query.u_top) if layer.n else np.zeros(query.u_top + 1)
                rows += [{"n": layer.n, "level": i, "u": u, "psi": float(fmt.format(v))}
                         for u, v in enumerate(curve)]
        out.write(json.dumps(rows, indent=1) + "\n")
    else:
        buf = io.StringIO()
        write_grid_csv(result, buf, fmt)
        out.write(buf.getvalue())
    return 0


def cmd_simulate(args) -> int:
    cfg = _merge(args, QUERY_KEYS)
    n_paths = args.paths if args.paths is not None else cfg.get("n_paths", 100_000)
    seed = args.seed if args.seed is not None else cfg.get("seed", 0)
    if int(n_paths) < 1:
        raise ValidationError("paths must be ≥ 1")
    if int(seed) < 0:
        raise ValidationError("seed must be >= 0")
    workers = args.workers if args.workers is not None else default_workers()
    if workers < 1:
        raise ValidationError("workers must be >= 1")
    query = build_query(cfg)
    est = simulate(query, int(n_paths), int(seed), workers)
    fmt = _fmt(args.full_precision)
    d = est.as_dict()
    d["p_hat"] = float(fmt.format(d["p_hat"]))
    d["stderr"] = float(fmt.format(d["stderr"]))
    d["ci95"] = [float(fmt.format(v)) for v in d["ci95"]]
    out = _Output(args.out)
    if args.format == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["p_hat", "stderr", "ci95_low", "ci95_high", "n_paths", "seed", "rng_id"])
        w.writerow([d["p_hat"], d["stderr"], *d["ci95"], d["n_paths"], d["seed"], d["rng_id"]])
        out.write(buf.getvalue())
    else:
        out.write(json.dumps(d, indent=2) + "\n")
    return 0


def cmd_markov(args) -> int:
    cfg = _merge(args, ("principle", "distribution", "scale"))
    principle = Principle.parse(cfg["principle"])
    scale = _scale(cfg["scale"])
    dist = _distribution(cfg["distribution"], cfg.get("truncation_epsilon"))
    rules = _rules(cfg, principle, len(scale))
    P = transition_matrix(dist, rules, principle)
    pi = stationary_distribution(P)
    ep = expected_premium(pi, scale)
    fmt = _fmt(args.full_precision)
    out = _Output(args.out)
    if args.format == "json":
        payload = {
            "principle": principle.value,
            "levels": list(scale.levels),
            "matrix": [[float(fmt.format(v)) for v in row] for row in P],
            "stationary": [float(fmt.format(v)) for v in pi],
            "expected_premium": float(fmt.format(ep)),
        }
        out.write(json.dumps(payload, indent=2) + "\n")
        return 0
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    labels = level_labels(scale)
    w.writerow(["from"] + labels)
    for lab, row in zip(labels, P):
        w.writerow([lab] + [fmt.format(v) for v in row])
    w.writerow(["stationary"] + [fmt.format(v) for v in pi])
    w.writerow(["expected_premium", fmt.format(ep)])
    out.write(buf.getvalue())
    return 0


def cmd_reproduce(args) -> int:
    tables = sorted(set(args.table)) if args.table else [1, 2, 3, 4]
    workers = args.workers if args.workers is not None else default_workers()
    if workers < 1:
        raise ValidationError("workers must be >= 1")
    full = not args.table
    summary = reproduce_all(
        out_dir=args.out,
        tables=tables,
        smoke=args.smoke,
        figures=full,
        markov=full or args.markov,
        workers=workers,
    )
    sys.stdout.write(summary.text())
    if args.out:
        sys.stdout.write(f"outputs written to {args.out}\n")
    if args.strict and not summary.passed:
        return 2
    return 0


def _sweep_grid(cfg: dict, args) -> tuple[list[Principle], list[float], list[int]]:
    principles = args.principles if args.principles is not None else cfg.get("principles", "all")
    if isinstance(principles, str):
        principles = [p for p in principles.split(",") if p.strip()]
    if principles == ["all"]:
        principles = list(Principle)
    principles = [Principle.parse(p) for p in principles]
    qs = args.q_values if args.q_values is not None else cfg.get("q_values", [0.2, 0.8])
    if isinstance(qs, (int, float)):
        qs = [qs]
    us = args.u_values if args.u_values is not None else cfg.get("u_values", list(CATALOG.u_grid))
    if isinstance(us, str):
        us = _int_list(us)
    qs = [float(q) for q in qs]
    us = sorted({int(u) for u in us})
    if not principles or not qs or not us:
        raise ValidationError("sweep grid must have at least one principle, q and u")
    if any(u < 0 for u in us):
        raise ValidationError("sweep u values must be >= 0")
    return principles, qs, us


def cmd_sweep(args) -> int:
    cfg = _merge(args, ("distribution", "scale", "level0", "horizon"))
    principles, qs, us = _sweep_grid(cfg, args)
    budget = args.budget if args.budget is not None else int(cfg.get("budget", DEFAULT_SWEEP_BUDGET))
    cells = len(principles) * len(qs) * len(us)
    if cells > budget:
        raise ValidationError(f"sweep has {cells} cells, over the budget of {budget}; refusing")
    queries = []
    for p in principles:
        for q in qs:
            c = dict(cfg, principle=p.value, q=q, u0=0)
            queries.append((p, q, build_query(c)))
    fmt = _fmt(args.full_precision)
    rows = []
    for p, q, query in queries:
        curve = ruin_probability(RuinQuery(
            query.principle, query.dist, query.q, query.scale, query.rules,
            0, query.i0, query.horizon, u_max=max(us),
        )).curve
        vals = [float(curve[u]) for u in us]
        if any(b > a for a, b in zip(vals, vals[1:])):
            log.warning("psi not non-increasing in u for %s q=%s", p.value, q)
        rows += [(p.value, q, u, v) for u, v in zip(us, vals)]
    out = _Output(args.out)
    if args.format == "json":
        out.write(json.dumps([{"principle": p, "q": q, "u": u, "psi": float(fmt.format(v))}
                              for p, q, u, v in rows], indent=1) + "\n")
    else:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["principle", "q", "u", "psi"])
        for p, q, u, v in rows:
            w.writerow([p, f"{q:g}", u, fmt.format(v)])
        out.write(buf.getvalue())
    return 0


# -- parser -----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="JSON or YAML file; flags override its fields")
    common.add_argument("--out", help="write output here instead of stdout")
    common.add_argument("--format", choices=("csv", "json"), default=None)
    common.add_argument("--full-precision", action="store_true", help="17 significant digits instead of 6")
    common.add_argument("--truncation-epsilon", type=float, default=None,
                        help="tail mass cutoff for claim distributions (sampling and grids)")
    common.add_argument("-v", "--verbose", action="count", default=0)

    query = _Parser(add_help=False)
    query.add_argument("--principle")
    query.add_argument("--distribution", "--dist", dest="distribution", help="H, M or L")
    query.add_argument("--q", type=float)
    query.add_argument("--scale", type=_int_list, help="premium levels, e.g. 11,12,14,16,18")
    query.add_argument("--u0", type=int)
    query.add_argument("--level0", type=int)
    query.add_argument("--horizon", type=int)

    parser = _Parser(prog="ruinlab", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("ruin", parents=[common, query], help="exact ruin probability")
    p.add_argument("--emit", choices=("value", "grid"))
    p.set_defaults(func=cmd_ruin)

    p = sub.add_parser("simulate", parents=[common, query], help="Monte Carlo estimate")
    p.add_argument("--paths", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--workers", type=int)
    p.set_defaults(func=cmd_simulate, default_format="json")

    p = sub.add_parser("markov", parents=[common], help="transition matrix and stationary vector")
    p.add_argument("--principle")
    p.add_argument("--distribution", "--dist", dest="distribution")
    p.add_argument("--scale", type=_int_list)
    p.set_defaults(func=cmd_markov)

    p = sub.add_parser("reproduce", parents=[common], help="rerun the reference tables and compare")
    p.add_argument("--table", type=int, action="append", choices=(1, 2, 3, 4))
    p.add_argument("--markov", action="store_true", help="include the Markov chain checks")
    p.add_argument("--smoke", action="store_true", help="u in {0,50,100}, scenarios H1 and L2 only")
    p.add_argument("--strict", action="store_true", help="exit 2 when any cell is beyond tolerance")
    p.add_argument("--workers", type=int)
    p.set_defaults(func=cmd_reproduce)

    p = sub.add_parser("sweep", parents=[common], help="psi over a (principle, q, u) grid")
    p.add_argument("--distribution", "--dist", dest="distribution")
    p.add_argument("--scale", type=_int_list)
    p.add_argument("--level0", type=int)
    p.add_argument("--horizon", type=int)
    p.add_argument("--principles", help="comma list or 'all'")
    p.add_argument("--q-values", type=_float_list, dest="q_values")
    p.add_argument("--u-values", type=_int_list, dest="u_values", help="start:stop:step or comma list")
    p.add_argument("--budget", type=int, help=f"max grid cells (default {DEFAULT_SWEEP_BUDGET})")
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    if args.format is None:
        args.format = getattr(args, "default_format", "csv")
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s: %(message)s")
    try:
        return args.func(args)
    except (ValidationError, NonHomogeneousChainError, ReducibleChainError, EnumerationBudgetError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
