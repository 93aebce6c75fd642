"""
Experiment orchestration: DQN training, static baselines, RunLog CSVs,
summaries and cross-run comparison.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from hybridslice import __version__
from hybridslice.agent import DQNAgent, Transition
from hybridslice.baselines import (
    NvsWeights,
    hard_dqn_config,
    nvs_alloc,
    op_search,
    search_grid,
    static_config,
)
from hybridslice.config import ExperimentConfig
from hybridslice.env import Allocation, EnvConfig, SlicingEnv, encode_action
from hybridslice.metrics import STATS_COLUMNS, stats_rows

log = logging.getLogger(__name__)

RUNLOG_SCHEMA = 1
OUTPUT_ENV_VAR = "HYBRIDSLICE_OUT"


def episode_seed(seed: int, episode: int) -> list:
    """Environment seed of one episode; shared by every algorithm on the same run seed."""
    return [int(seed), int(episode)]


def runlog_columns(slice_names: Sequence[str]) -> List[str]:
    cols = ["seed", "episode", "epoch", "step", "reward", "utility", "spectral_eff", "spectral_eff_norm",
            "action", "projected", "common", "epsilon", "loss"]
    for name in slice_names:
        cols += [f"w_{name}", f"q_{name}", f"o_{name}", f"mu_{name}", f"wc_{name}"]
    return cols


@dataclass
class RunLog:
    header: dict
    columns: List[str]
    rows: List[dict] = field(default_factory=list)

    @property
    def slice_names(self) -> List[str]:
        return [c[2:] for c in self.columns if c.startswith("w_")]

    def body(self) -> str:
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=self.columns, lineterminator="\n")
        w.writeheader()
        for r in self.rows:
            w.writerow({k: _fmt(r.get(k, "")) for k in self.columns})
        return buf.getvalue()

    def write(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        head = "".join(f"# {k}: {json.dumps(v, sort_keys=True)}\n" for k, v in self.header.items())
        path.write_text(head + self.body())
        return path

    @classmethod
    def read(cls, path) -> "RunLog":
        header, body = {}, []
        for line in Path(path).read_text().splitlines(keepends=True):
            if line.startswith("# "):
                k, _, v = line[2:].partition(": ")
                header[k] = json.loads(v)
            else:
                body.append(line)
        if header.get("schema") != RUNLOG_SCHEMA:
            raise ValueError(f"{path}: unsupported RunLog schema {header.get('schema')!r}")
        reader = csv.DictReader(body)
        rows = [{k: _parse(v) for k, v in r.items()} for r in reader]
        return cls(header, list(reader.fieldnames or []), rows)

    def series(self, column: str, seed: Optional[int] = None) -> np.ndarray:
        return np.asarray([r[column] for r in self.rows if seed is None or r["seed"] == seed], dtype=float)

    @property
    def seeds(self) -> List[int]:
        return sorted({r["seed"] for r in self.rows})


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (bool, np.bool_)):
        return int(v)
    return v


def _parse(v: str):
    if v == "":
        return None
    for cast in (int, float):
        try:
            return cast(v)
        except ValueError:
            pass
    return v


def _row(seed, episode, epoch, step, reward, info, epsilon=None, loss=None) -> dict:
    st = info["stats"]
    alloc: Allocation = info["allocation"]
    row = dict(
        seed=seed, episode=episode, epoch=epoch, step=step, reward=reward, utility=st.utility,
        spectral_eff=st.spectral_eff, spectral_eff_norm=st.spectral_eff_norm,
        action="/".join(str(a) for a in info["applied"]), projected=bool(info["projected"]),
        common=alloc.common, epsilon=epsilon if epsilon is not None else "", loss=loss if loss is not None else "",
    )
    for s in st.slices:
        row.update({f"w_{s.name}": s.dedicated_rbs, f"q_{s.name}": s.q_sla, f"o_{s.name}": s.isolation,
                    f"mu_{s.name}": s.utilization, f"wc_{s.name}": s.common_used})
    return row


def algorithm_env(cfg: ExperimentConfig, algorithm: Optional[str] = None) -> EnvConfig:
    algorithm = algorithm or cfg.algorithm
    if algorithm == "hard-dqn":
        return hard_dqn_config(cfg.env)
    return cfg.env


def train(
    env_config: EnvConfig,
    exp: ExperimentConfig,
    seed: int,
    on_epoch: Optional[Callable[[dict], None]] = None,
    stats_sink: Optional[list] = None,
):
    """Train one DQN agent; returns ``(agent, rows)``.

    Epsilon decays over the global epoch count across all episodes.
    """
    tc = exp.train
    env = SlicingEnv(env_config)
    agent = DQNAgent(env.obs_dim, env.num_actions, tc, seed=[int(seed), 0xA6E7])
    total = tc.episodes * env_config.episode_epochs
    rows = []
    step = 0
    for ep in range(tc.episodes):
        obs = env.reset(episode_seed(seed, ep))
        while not env.done:
            eps = tc.epsilon(step, total)
            a = agent.act(obs, eps)
            nxt, r, info = env.step(a)
            agent.observe(Transition(obs, a, r, nxt, env.done))
            loss = agent.learn()
            row = _row(seed, ep, info["epoch"], step, r, info, eps, loss)
            rows.append(row)
            if stats_sink is not None:
                stats_sink.extend(stats_rows(ep, info["epoch"], info["stats"]))
            if on_epoch is not None:
                on_epoch(row)
            obs = nxt
            step += 1
    return agent, rows


def evaluate_agent(agent: DQNAgent, env_config: EnvConfig, seed: int, episodes: int = 1, epsilon: float = 0.0):
    env = SlicingEnv(env_config)
    rows = []
    step = 0
    for ep in range(episodes):
        obs = env.reset(episode_seed(seed, ep))
        while not env.done:
            a = agent.act(obs, epsilon)
            obs, r, info = env.step(a)
            rows.append(_row(seed, ep, info["epoch"], step, r, info, epsilon))
            step += 1
    return rows


def run_static(env_config: EnvConfig, alloc: Allocation, seed: int, episodes: int = 1, stats_sink=None):
    cfg = static_config(env_config, alloc)
    env = SlicingEnv(cfg)
    noop = encode_action([0] * cfg.num_slices, cfg.action_set)
    rows = []
    step = 0
    for ep in range(episodes):
        env.reset(episode_seed(seed, ep))
        while not env.done:
            _, r, info = env.step(noop)
            rows.append(_row(seed, ep, info["epoch"], step, r, info))
            if stats_sink is not None:
                stats_sink.extend(stats_rows(ep, info["epoch"], info["stats"]))
            step += 1
    return rows


def nvs_allocation(env_config: EnvConfig) -> Allocation:
    return nvs_alloc(NvsWeights(env_config.weights()), env_config.num_rbs)


def tail(x: np.ndarray, fraction: float = 0.1) -> np.ndarray:
    n = max(1, int(round(len(x) * fraction)))
    return x[-n:]


def summarize(runlog: RunLog, thresholds: Optional[Dict[str, float]] = None) -> dict:
    """Converged reward (last 10% of epochs), per-slice SLA hit rate, final isolation."""
    out = {"converged_reward": {}, "sla_fraction": {}, "final_isolation": {}}
    thresholds = thresholds or runlog.header.get("q_thresholds", {})
    for seed in runlog.seeds:
        out["converged_reward"][seed] = float(tail(runlog.series("reward", seed)).mean())
        out["sla_fraction"][seed] = {
            m: float(np.mean(runlog.series(f"q_{m}", seed) >= thresholds.get(m, 1.0))) for m in runlog.slice_names
        }
        out["final_isolation"][seed] = {m: float(tail(runlog.series(f"o_{m}", seed)).mean()) for m in runlog.slice_names}
    out["mean_converged_reward"] = float(np.mean(list(out["converged_reward"].values())))
    return out


def format_summary(name: str, summary: dict) -> str:
    lines = [f"[{name}] mean converged reward (last 10% of epochs): {summary['mean_converged_reward']:.4f}"]
    for seed, r in summary["converged_reward"].items():
        sla = ", ".join(f"{m}={v:.3f}" for m, v in summary["sla_fraction"][seed].items())
        iso = ", ".join(f"{m}={v:.3f}" for m, v in summary["final_isolation"][seed].items())
        lines.append(f"  seed {seed}: reward {r:.4f} | SLA-met fraction {sla} | final isolation {iso}")
    return "\n".join(lines)


def runlog_header(exp: ExperimentConfig, algorithm: str, env_config: EnvConfig, extra: Optional[dict] = None) -> dict:
    h = dict(
        schema=RUNLOG_SCHEMA,
        version=__version__,
        algorithm=algorithm,
        profile=exp.profile,
        config_hash=exp.config_hash,
        scenario_hash=exp.scenario_hash,
        q_thresholds={s.name: s.sla.q_threshold for s in env_config.slices},
        config=exp.raw,
    )
    h.update(extra or {})
    return h


@dataclass
class RunResult:
    runlog: RunLog
    summary: dict
    files: Dict[str, Path]
    agents: Dict[int, DQNAgent] = field(default_factory=dict)
    op: Optional[object] = None


def output_dir(exp: ExperimentConfig, override=None) -> Path:
    return Path(override or os.environ.get(OUTPUT_ENV_VAR) or exp.output)


def run(
    exp: ExperimentConfig,
    out=None,
    algorithm: Optional[str] = None,
    write: bool = True,
    progress: Optional[Callable[[str], None]] = None,
) -> RunResult:
    """Execute one algorithm over every configured seed and write its artifacts."""
    algorithm = algorithm or exp.algorithm
    env_config = algorithm_env(exp, algorithm)
    names = [s.name for s in env_config.slices]
    rows: List[dict] = []
    stats: List[dict] = []
    agents: Dict[int, DQNAgent] = {}
    extra: dict = {}
    op_result = None
    if algorithm in ("proposed", "hard-dqn"):
        for seed in exp.seeds:
            agent, r = train(env_config, exp, seed, stats_sink=stats)
            agents[seed] = agent
            rows += r
            if progress:
                progress(f"{algorithm} seed {seed}: trained {len(r)} epochs")
    elif algorithm == "nvs":
        alloc = nvs_allocation(env_config)
        extra["allocation"] = [list(alloc.dedicated), alloc.common]
        for seed in exp.seeds:
            rows += run_static(env_config, alloc, seed, exp.train.episodes, stats)
    elif algorithm == "op":
        grid = search_grid(env_config.num_rbs, env_config.num_slices, exp.op.grid_step)
        op_seeds = [episode_seed(s, 0) for s in exp.op.seeds]
        op_result = op_search(env_config, grid, op_seeds)
        alloc = op_result.allocation
        extra["allocation"] = [list(alloc.dedicated), alloc.common]
        extra["op_utility"] = op_result.utility
        for seed in exp.seeds:
            rows += run_static(env_config, alloc, seed, exp.train.episodes, stats)
    else:
        raise ValueError(f"unknown algorithm {algorithm!r}")

    runlog = RunLog(runlog_header(exp, algorithm, env_config, extra), runlog_columns(names), rows)
    summary = summarize(runlog)
    files: Dict[str, Path] = {}
    if write:
        d = output_dir(exp, out)
        d.mkdir(parents=True, exist_ok=True)
        files["runlog"] = runlog.write(d / f"runlog_{algorithm}.csv")
        files["stats"] = _write_csv(d / f"epoch_stats_{algorithm}.csv", STATS_COLUMNS, stats)
        files["summary"] = d / f"summary_{algorithm}.txt"
        files["summary"].write_text(format_summary(algorithm, summary) + "\n")
        for seed, agent in agents.items():
            files[f"checkpoint_{seed}"] = d / f"checkpoint_{algorithm}_seed{seed}.npz"
            agent.save(files[f"checkpoint_{seed}"])
        if op_result is not None:
            files["audit"] = _write_csv(
                d / "op_candidates.csv", ["candidate", "dedicated", "common", "seed", "utility", "reward"],
                [dict(a, seed=json.dumps(a["seed"])) for a in op_result.audit],
            )
    return RunResult(runlog, summary, files, agents, op_result)


def _write_csv(path: Path, columns, rows) -> Path:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(columns), lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: _fmt(r.get(k, "")) for k in columns})
    return path


def compare(logs: Dict[str, RunLog], reference: Optional[str] = None):
    """Align per-step mean reward across runs of the same scenario.

    Returns:
        ``(table, deltas)``: rows ``{step, <name>...}`` with the seed-mean
        reward of each run, and converged-reward differences of
        ``reference`` (default: the first log) against every other log.
    """
    if len(logs) < 2:
        raise ValueError("compare needs at least two run logs")
    hashes = {name: lg.header.get("scenario_hash") for name, lg in logs.items()}
    if len(set(hashes.values())) != 1:
        raise ValueError(f"scenario hash mismatch, refusing to compare: {hashes}")
    for name, lg in logs.items():
        if lg.header.get("schema") != RUNLOG_SCHEMA:
            raise ValueError(f"{name}: unsupported RunLog schema {lg.header.get('schema')!r}")
    curves = {}
    for name, lg in logs.items():
        by_step: Dict[int, List[float]] = {}
        for r in lg.rows:
            by_step.setdefault(r["step"], []).append(r["reward"])
        curves[name] = {s: float(np.mean(v)) for s, v in by_step.items()}
    steps = sorted(set().union(*[c.keys() for c in curves.values()]))
    table = [dict(step=s, **{n: curves[n].get(s, "") for n in logs}) for s in steps]
    reference = reference or next(iter(logs))
    conv = {n: summarize(lg)["mean_converged_reward"] for n, lg in logs.items()}
    deltas = {n: conv[reference] - conv[n] for n in logs if n != reference}
    return table, dict(reference=reference, converged=conv, deltas=deltas)


def write_compare(table, report, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    cols = ["step"] + [k for k in table[0] if k != "step"] if table else ["step"]
    return _write_csv(path, cols, table)
