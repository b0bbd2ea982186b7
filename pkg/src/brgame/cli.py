"""Command-line entry point.

Exit codes: 0 success, 1 oracle failure, 2 input error, 3 runtime degeneracy
(a degenerate plan, or every benchmark cell failing).
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import yaml

from . import bench, oracle
from .planner import receding_horizon_execute, write_summary, write_trajectory_csv
from .policy import PRIOR_KINDS
from .scenario import (VERSION, ScenarioError, _Lines, _Reader, dumps, from_dict,
                       load, to_dict)
from .world import LEVELS

EXIT_OK = 0
EXIT_ORACLE = 1
EXIT_INPUT = 2
EXIT_DEGENERATE = 3

logger = logging.getLogger("brgame")


class InputError(Exception):
    """Bad command-line input; reported with exit code 2."""


# --- sweep files --------------------------------------------------------------

def sweep_from_dict(data, lines: _Lines | None = None, base_dir: Path = Path(".")) -> bench.SweepConfig:
    """Parse a sweep mapping.

    ``scenario`` is either an inline scenario mapping or a path relative to
    the sweep file. A prior assignment may be a single kind, applied to every
    agent, or a list with one kind per agent.
    """
    r = _Reader(lines or _Lines(yaml.compose(json.dumps(data))))
    r.mapping(data, "", required=("version", "scenario", "samples", "env_levels", "seeds"),
              optional=("prior_assignments", "scenario_id", "expert_samples"))
    if data["version"] != VERSION:
        r.fail("version", f"unsupported version {data['version']!r}; expected {VERSION}")
    src = data["scenario"]
    if isinstance(src, str):
        base = load(base_dir / src)
    elif isinstance(src, dict):
        base = from_dict(src)
    else:
        r.fail("scenario", "expected a path or an inline scenario mapping")
    n = len(base.agents)

    def int_list(key, lo):
        vals = data[key]
        if not isinstance(vals, list) or not vals:
            r.fail(key, "expected a non-empty list")
        return tuple(int(r.number(v, f"{key}[{i}]", lo=lo, integer=True))
                     for i, v in enumerate(vals))

    samples = int_list("samples", 1)
    seeds = int_list("seeds", 0)
    levels = data["env_levels"]
    if not isinstance(levels, list) or not levels:
        r.fail("env_levels", "expected a non-empty list")
    for i, level in enumerate(levels):
        if level not in LEVELS and level != base.env.level:
            r.fail(f"env_levels[{i}]", f"expected one of {LEVELS}")
    assignments = []
    for i, a in enumerate(data.get("prior_assignments") or [list(base.priors)]):
        path = f"prior_assignments[{i}]"
        kinds = [a] * n if isinstance(a, str) else a
        if not isinstance(kinds, list) or len(kinds) != n or any(k not in PRIOR_KINDS for k in kinds):
            r.fail(path, f"expected a prior kind or a list of {n} kinds from {PRIOR_KINDS}")
        assignments.append(tuple(kinds))
    expert = int(r.number(data.get("expert_samples", bench.EXPERT_SAMPLES), "expert_samples",
                          lo=1, integer=True))
    sid = data.get("scenario_id", base.name)
    if not isinstance(sid, str):
        r.fail("scenario_id", "expected a string")
    return bench.SweepConfig(base, samples, tuple(levels), tuple(assignments), seeds, sid, expert)


def load_sweep(path) -> bench.SweepConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ScenarioError(f"cannot read sweep file {path}: {exc.strerror}") from None
    try:
        node = yaml.compose(text, Loader=yaml.SafeLoader)
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ScenarioError(f"<root>: invalid YAML: {exc}") from None
    if node is None:
        raise ScenarioError("<root>: empty sweep file")
    return sweep_from_dict(data, _Lines(node), path.parent)


def sweep_to_dict(sweep: bench.SweepConfig) -> dict:
    return {
        "version": VERSION,
        "scenario": to_dict(sweep.base),
        "scenario_id": sweep.scenario_id,
        "samples": list(sweep.samples),
        "env_levels": list(sweep.env_levels),
        "prior_assignments": [list(a) for a in sweep.prior_assignments],
        "seeds": list(sweep.seeds),
        "expert_samples": sweep.expert_samples,
    }


# --- helpers ------------------------------------------------------------------

def _seeds(text: str) -> tuple[int, ...]:
    try:
        seeds = tuple(int(s) for s in text.split(",") if s.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")
    if not seeds or any(s < 0 for s in seeds):
        raise argparse.ArgumentTypeError("need at least one non-negative seed")
    return seeds


def _positive_int(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}")
    if value < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return value


def _positive_float(text: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a number, got {text!r}")
    if not value > 0:
        raise argparse.ArgumentTypeError("must be > 0")
    return value


def _prepare_out_dir(path: Path, force: bool) -> None:
    if path.exists() and not path.is_dir():
        raise InputError(f"{path} exists and is not a directory")
    if path.is_dir() and any(path.iterdir()) and not force:
        raise InputError(f"output directory {path} is not empty; pass --force to overwrite")
    path.mkdir(parents=True, exist_ok=True)


def _dump_config(path, text: str) -> None:
    if path:
        Path(path).write_text(text)
        print(f"effective config written to {path}")


# --- subcommands ------------------------------------------------------------------

def cmd_plan(args) -> int:
    scenario = load(args.scenario)
    _dump_config(args.dump_effective_config, dumps(scenario))
    out = Path(args.out)
    if out.exists() and not args.force:
        raise InputError(f"{out} exists; pass --force to overwrite")
    out.parent.mkdir(parents=True, exist_ok=True)
    run = receding_horizon_execute(scenario, master_seed=args.seed, workers=args.threads,
                                   track_gap=args.track_gap)
    write_trajectory_csv(out, run)
    summary = out.with_suffix(".summary.json")
    write_summary(summary, run, {"seed": args.seed, "scenario": scenario.name,
                                 "content_hash": scenario.content_hash()})
    print(f"wrote {out} and {summary}")
    print("utilities: " + ", ".join(f"{u:.3f}" for u in run.utilities))
    if run.degenerate:
        print("planning degenerated: every sample weight underflowed in some update",
              file=sys.stderr)
        return EXIT_DEGENERATE
    return EXIT_OK


def cmd_benchmark(args) -> int:
    sweep = load_sweep(args.sweep)
    _dump_config(args.dump_effective_config,
                 yaml.safe_dump(sweep_to_dict(sweep), sort_keys=False, default_flow_style=None))
    out = Path(args.out_dir)
    _prepare_out_dir(out, args.force)
    records = bench.run_sweep(sweep, workers=args.threads)
    rows = bench.summarize(records)
    bench.write_records(out / "records.csv", records)
    bench.write_summary_csv(out / "summary.csv", rows)
    charts = bench.write_charts(out, rows) if args.charts else []
    for r in rows:
        print(f"{r.env_level} D={r.samples} {'/'.join(r.priors)}: "
              f"{r.mean:.3f} +- {r.std:.3f} (n={r.count}, failed={r.failed})")
    print(f"wrote {len(records)} records to {out}" + (f" and {len(charts)} charts" if charts else ""))
    if all(r.failed for r in records):
        print("every cell failed", file=sys.stderr)
        return EXIT_DEGENERATE
    return EXIT_OK


def cmd_replacement(args) -> int:
    scenario = load(args.scenario)
    if len(scenario.agents) != 5:
        raise InputError(f"the replacement study needs 5 agents; {args.scenario} has "
                         f"{len(scenario.agents)}")
    _dump_config(args.dump_effective_config, dumps(scenario))
    out = Path(args.out_dir)
    _prepare_out_dir(out, args.force)
    rows, records = bench.replacement_study(scenario, args.seeds, workers=args.threads)
    bench.write_replacement_csv(out / "replacement.csv", rows)
    bench.write_records(out / "records.csv", records)
    if args.charts:
        bench.write_replacement_chart(out / "replacement.svg", rows)
    for r in rows:
        sub = lambda v: "absent" if v is None else f"{v:.3f}"  # noqa: E731
        print(f"k={r.num_informed}: group {r.group_score:.3f} informed {sub(r.informed_score)} "
              f"uniform {sub(r.uniform_score)} (seeds={r.seeds}, failed={r.failed})")
    if all(r.failed for r in records):
        print("every run failed", file=sys.stderr)
        return EXIT_DEGENERATE
    return EXIT_OK


def cmd_oracle(args) -> int:
    report = oracle.run_oracle_suite(args.tolerance, seed=args.seed)
    for line in report.lines():
        print(line)
    if args.out:
        Path(args.out).write_text(report.to_json() + "\n")
    return EXIT_OK if report.passed else EXIT_ORACLE


# --- parser -------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--threads", type=_positive_int, default=1,
                        help="worker threads for sample rollouts (never changes results)")
    common.add_argument("--force", action="store_true", help="overwrite existing outputs")
    common.add_argument("-v", "--verbose", action="store_true")

    dump = argparse.ArgumentParser(add_help=False)
    dump.add_argument("--dump-effective-config", metavar="PATH",
                      help="write the fully resolved input back out as YAML")

    parser = argparse.ArgumentParser(prog="brgame", description=(
        "Bounded-rational iterative best-response planning for multi-agent navigation."))
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("plan", parents=[common, dump], help="execute one scenario")
    p.add_argument("scenario")
    p.add_argument("--seed", type=int, default=0, help="master seed for planner randomness")
    p.add_argument("--out", default="trajectory.csv",
                   help="trajectory CSV; the summary goes next to it as .summary.json")
    p.add_argument("--track-gap", action="store_true", help="estimate the NE gap every step")
    p.set_defaults(func=cmd_plan)

    p = sub.add_parser("benchmark", parents=[common, dump], help="run a sweep file")
    p.add_argument("sweep")
    p.add_argument("--out-dir", default="bench_out")
    p.add_argument("--no-charts", dest="charts", action="store_false")
    p.set_defaults(func=cmd_benchmark)

    p = sub.add_parser("replacement", parents=[common, dump],
                       help="swap uniform agents for informed ones, k = 0..5")
    p.add_argument("scenario")
    p.add_argument("--seeds", type=_seeds, default=tuple(range(10)))
    p.add_argument("--out-dir", default="replacement_out")
    p.add_argument("--no-charts", dest="charts", action="store_false")
    p.set_defaults(func=cmd_replacement)

    p = sub.add_parser("oracle", parents=[common], help="run the exact-oracle checks")
    p.add_argument("--tolerance", type=_positive_float, default=oracle.DEFAULT_TOLERANCE)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="write the report as JSON")
    p.set_defaults(func=cmd_oracle)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ScenarioError, InputError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except bench.DegenerateBaselineError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DEGENERATE


if __name__ == "__main__":
    sys.exit(main())
