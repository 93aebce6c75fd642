"""Command line entry point: ``hybridslice {train,eval,oracle,compare,sweep}``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import List, Optional

from hybridslice.agent import DQNAgent
from hybridslice.config import ALGORITHMS, PROFILES, ConfigError, load_config
from hybridslice.env import InvariantError
from hybridslice.runner import (
    RunLog,
    runlog_header,
    algorithm_env,
    compare,
    evaluate_agent,
    format_summary,
    output_dir,
    run,
    runlog_columns,
    summarize,
    write_compare,
)

log = logging.getLogger("hybridslice")

EXIT_CONFIG = 2
EXIT_INVARIANT = 3


def _common(p: argparse.ArgumentParser):
    p.add_argument("--config", type=Path, help="YAML experiment file (default: bundled scenario)")
    p.add_argument("--profile", choices=sorted(PROFILES), help="scale profile")
    p.add_argument("--seed", type=int, action="append", help="run seed; repeat for several")
    p.add_argument("--out", type=Path, help="output directory (overrides HYBRIDSLICE_OUT and the config)")


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="hybridslice", description="Hybrid RAN slicing simulator and DQN harness")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="run one algorithm over the configured seeds")
    _common(p)
    p.add_argument("--algorithm", choices=ALGORITHMS)

    p = sub.add_parser("eval", help="greedy rollout of a saved agent")
    _common(p)
    p.add_argument("--algorithm", choices=("proposed", "hard-dqn"))
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--episodes", type=int, default=1)

    p = sub.add_parser("oracle", help="exhaustive static-allocation search")
    _common(p)
    p.add_argument("--grid-step", type=int)

    p = sub.add_parser("compare", help="align rewards of several run logs")
    p.add_argument("logs", nargs="+", type=Path)
    p.add_argument("--reference", help="log name the deltas are taken against (file stem, or dir/stem when stems collide)")
    p.add_argument("--out", type=Path, help="where to write the aligned CSV")

    p = sub.add_parser("sweep", help="run several algorithms then compare them")
    _common(p)
    p.add_argument("--algorithm", choices=ALGORITHMS, action="append",
                   help="algorithm to include; repeat for several (default: all)")
    return ap


def _load(args, **extra):
    overrides = dict(extra)
    if args.seed:
        overrides["seeds"] = list(args.seed)
    if getattr(args, "algorithm", None) and isinstance(args.algorithm, str):
        overrides["algorithm"] = args.algorithm
    return load_config(args.config, profile=args.profile, overrides=overrides or None)


def _say(msg: str):
    print(msg, flush=True)


def cmd_train(args) -> int:
    exp = _load(args)
    res = run(exp, args.out, progress=log.info)
    _say(format_summary(exp.algorithm, res.summary))
    _say(f"run log: {res.files['runlog']}")
    return 0


def cmd_oracle(args) -> int:
    extra = {"algorithm": "op"}
    if args.grid_step is not None:
        extra["op"] = {"grid_step": args.grid_step}
    exp = _load(args, **extra)
    res = run(exp, args.out, algorithm="op", progress=log.info)
    best = res.op
    _say(f"best static allocation: dedicated {list(best.allocation.dedicated)} common {best.allocation.common} "
         f"(mean utility {best.utility:.4f}, mean reward {best.reward:.4f})")
    _say(format_summary("op", res.summary))
    _say(f"candidate audit: {res.files['audit']}")
    return 0


def cmd_eval(args) -> int:
    exp = _load(args)
    algorithm = exp.algorithm if exp.algorithm in ("proposed", "hard-dqn") else "proposed"
    env_config = algorithm_env(exp, algorithm)
    agent = DQNAgent.load(args.checkpoint)
    rows = []
    for seed in exp.seeds:
        rows += evaluate_agent(agent, env_config, seed, args.episodes)
    header = runlog_header(exp, algorithm, env_config, {"checkpoint": args.checkpoint.name, "mode": "eval"})
    runlog = RunLog(header, runlog_columns([s.name for s in env_config.slices]), rows)
    d = output_dir(exp, args.out)
    d.mkdir(parents=True, exist_ok=True)
    path = runlog.write(d / f"runlog_eval_{algorithm}.csv")
    summary = summarize(runlog)
    (d / f"summary_eval_{algorithm}.txt").write_text(format_summary(f"eval {algorithm}", summary) + "\n")
    _say(format_summary(f"eval {algorithm}", summary))
    _say(f"run log: {path}")
    return 0


def _report(table, report, out: Optional[Path]) -> None:
    ref = report["reference"]
    _say(f"converged reward (last 10% of epochs), reference {ref}:")
    for name, v in report["converged"].items():
        delta = "" if name == ref else f"  delta {ref} - {name} = {report['deltas'][name]:+.4f}"
        _say(f"  {name:<24} {v:.4f}{delta}")
    if out is not None:
        _say(f"aligned rewards: {write_compare(table, report, out)}")


def cmd_compare(args) -> int:
    stems = [p.stem for p in args.logs]
    names = [f"{p.parent.name}/{p.stem}" if stems.count(p.stem) > 1 else p.stem for p in args.logs]
    if len(set(names)) != len(names):
        raise ValueError(f"cannot tell the run logs apart by name: {[str(p) for p in args.logs]}")
    logs = {n: RunLog.read(p) for n, p in zip(names, args.logs)}
    table, report = compare(logs, args.reference)
    _report(table, report, args.out)
    return 0


def cmd_sweep(args) -> int:
    algorithms: List[str] = args.algorithm or list(ALGORITHMS)
    args.algorithm = None
    exp = _load(args)
    logs = {}
    d = output_dir(exp, args.out)
    for alg in algorithms:
        res = run(exp, d, algorithm=alg, progress=log.info)
        logs[alg] = res.runlog
        _say(format_summary(alg, res.summary))
    if len(logs) >= 2:
        table, report = compare(logs)
        _report(table, report, d / "compare.csv")
        (d / "compare.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    return 0


COMMANDS = {"train": cmd_train, "eval": cmd_eval, "oracle": cmd_oracle, "compare": cmd_compare, "sweep": cmd_sweep}


def main(argv: Optional[List[str]] = None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except InvariantError as exc:
        print(f"invariant breach: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    except (ConfigError, ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
