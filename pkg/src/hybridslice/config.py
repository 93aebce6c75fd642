"""
Experiment configuration: YAML loading, scale profiles, validation.

Validation errors name the offending key path and, when the value came
from a file, its line number.
"""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Dict, Optional, Tuple

import yaml

from hybridslice.agent import TrainConfig
from hybridslice.env import EnvConfig, SliceConfig
from hybridslice.metrics import SlaTarget
from hybridslice.radio import ChannelParams, dbm_to_watts
from hybridslice.traffic import TrafficModel

ALGORITHMS = ("proposed", "hard-dqn", "nvs", "op")
PROFILES: Dict[str, dict] = {
    "paper": {},
    "desk": {
        "scenario": {
            "channel": {"num_rbs": 20},
            "epoch_ttis": 100,
            "episode_epochs": 100,
            "initial_common": 6,
            "slices": [{"num_ues": 4}, {"num_ues": 10}],
        },
    },
}


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class OpConfig:
    grid_step: int = 5
    seeds: Tuple[int, ...] = (0, 1, 2)


@dataclass(frozen=True)
class ExperimentConfig:
    env: EnvConfig
    train: TrainConfig
    op: OpConfig
    algorithm: str
    seeds: Tuple[int, ...]
    output: str
    profile: str
    raw: dict  # fully resolved tree, echoed into run logs

    @property
    def config_hash(self) -> str:
        return _digest(self.raw)

    @property
    def scenario_hash(self) -> str:
        """Hash of the scenario section only, shared by every algorithm run on it."""
        return _digest(self.raw["scenario"])


def _digest(tree) -> str:
    blob = json.dumps(tree, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def default_tree() -> dict:
    text = resources.files("hybridslice").joinpath("scenarios/default.yaml").read_text()
    return yaml.safe_load(text)


def merge(base, override):
    """Recursive merge; lists of mappings of equal length merge elementwise."""
    if isinstance(base, dict) and isinstance(override, dict):
        out = dict(base)
        for k, v in override.items():
            out[k] = merge(base[k], v) if k in base else copy.deepcopy(v)
        return out
    if (
        isinstance(base, list)
        and isinstance(override, list)
        and len(base) == len(override)
        and all(isinstance(x, dict) for x in base + override)
    ):
        return [merge(b, o) for b, o in zip(base, override)]
    return copy.deepcopy(override)


def _line_map(text: str) -> Dict[Tuple, int]:
    """Map key paths to 1-based source lines."""
    lines: Dict[Tuple, int] = {}

    def walk(node, path):
        lines.setdefault(path, node.start_mark.line + 1)
        if isinstance(node, yaml.MappingNode):
            for k, v in node.value:
                p = path + (k.value,)
                lines[p] = k.start_mark.line + 1
                walk(v, p)
        elif isinstance(node, yaml.SequenceNode):
            for i, v in enumerate(node.value):
                walk(v, path + (i,))

    root = yaml.compose(text)
    if root is not None:
        walk(root, ())
    return lines


class _Builder:
    def __init__(self, tree: dict, lines: Dict[Tuple, int], source: str):
        self.tree = tree
        self.lines = lines
        self.source = source

    def fail(self, path: Tuple, msg: str):
        where = ".".join(str(p) for p in path) or "<root>"
        line = None
        for k in range(len(path), -1, -1):
            if path[:k] in self.lines:
                line = self.lines[path[:k]]
                break
        loc = f"{self.source}:{line}: " if line is not None else f"{self.source}: "
        raise ConfigError(f"{loc}{where}: {msg}")

    def get(self, path: Tuple, kind=None):
        node = self.tree
        for p in path:
            try:
                node = node[p]
            except (KeyError, IndexError, TypeError):
                self.fail(path, "missing required value")
        if kind is not None and node is not None:
            try:
                if kind is bool:
                    if not isinstance(node, bool):
                        raise TypeError
                elif kind is int:
                    if isinstance(node, bool) or int(node) != node:
                        raise TypeError
                    node = int(node)
                else:
                    node = kind(node)
            except (TypeError, ValueError):
                self.fail(path, f"expected {kind.__name__}, got {node!r}")
        return node

    def build(self, what, path: Tuple, **kwargs):
        try:
            return what(**kwargs)
        except (ValueError, TypeError) as exc:
            self.fail(path, str(exc))


def build(tree: dict, lines: Optional[Dict[Tuple, int]] = None, source: str = "<config>") -> ExperimentConfig:
    b = _Builder(tree, lines or {}, source)
    sc = ("scenario",)
    chp = sc + ("channel",)
    channel = b.build(
        ChannelParams,
        chp,
        tx_power=dbm_to_watts(b.get(chp + ("tx_power_dbm",), float)),
        rb_bandwidth=b.get(chp + ("rb_bandwidth_hz",), float),
        num_rbs=b.get(chp + ("num_rbs",), int),
        noise_psd=dbm_to_watts(b.get(chp + ("noise_psd_dbm_hz",), float)),
        tti_duration=b.get(chp + ("tti_s",), float),
        pathloss_model=b.get(chp + ("pathloss_model",), str),
        shadowing_stddev=b.get(chp + ("shadowing_db",), float),
        fading=b.get(chp + ("fading",), str),
    )
    slices = []
    raw_slices = b.get(sc + ("slices",))
    if not isinstance(raw_slices, list) or not raw_slices:
        b.fail(sc + ("slices",), "expected a nonempty list of slices")
    for i in range(len(raw_slices)):
        sp = sc + ("slices", i)
        tp, lp = sp + ("traffic",), sp + ("sla",)
        traffic = b.build(
            TrafficModel,
            tp,
            kind=b.get(tp + ("kind",), str),
            rate=b.get(tp + ("rate",), float),
            packet_size=b.get(tp + ("packet_size",), float),
        )
        sla_raw = b.get(lp)
        sla = b.build(
            SlaTarget,
            lp,
            kind=b.get(lp + ("kind",), str),
            rate_threshold=float(sla_raw.get("rate_threshold", 0.0)),
            d_max=float(sla_raw.get("d_max", 0.0)),
            reliability_target=float(sla_raw.get("reliability_target", 1.0)),
            q_threshold=float(sla_raw.get("q_threshold", 1.0)),
        )
        slices.append(
            b.build(
                SliceConfig,
                sp,
                name=b.get(sp + ("name",), str),
                num_ues=b.get(sp + ("num_ues",), int),
                traffic=traffic,
                sla=sla,
                scheduler=b.get(sp + ("scheduler",), str),
                rate_regime=b.get(sp + ("rate_regime",), str),
                alpha=b.get(sp + ("alpha",), float),
                isolation_threshold=b.get(sp + ("isolation_threshold",), float),
                priority=b.get(sp + ("priority",), int),
                error_prob=float(raw_slices[i].get("error_prob", 1e-5)),
                random_phase=bool(raw_slices[i]["traffic"].get("random_phase", False)),
            )
        )
    init_ded = b.get(sc + ("initial_dedicated",))
    nvs_w = b.get(sc + ("nvs_weights",))
    W = channel.num_rbs
    common = b.get(sc + ("initial_common",), int)
    if init_ded is not None:
        if not isinstance(init_ded, list) or len(init_ded) != len(slices):
            b.fail(sc + ("initial_dedicated",), f"expected a list of {len(slices)} RB counts")
        if sum(init_ded) + common != W:
            b.fail(
                sc + ("initial_dedicated",),
                f"RB budget constraint violated: sum of dedicated {init_ded} + common {common} "
                f"= {sum(init_ded) + common}, must equal W = {W}",
            )
    env = b.build(
        EnvConfig,
        sc,
        slices=tuple(slices),
        channel=channel,
        epoch_ttis=b.get(sc + ("epoch_ttis",), int),
        episode_epochs=b.get(sc + ("episode_epochs",), int),
        initial_common=common,
        initial_dedicated=tuple(init_ded) if init_ded is not None else None,
        nvs_weights=tuple(float(x) for x in nvs_w) if nvs_w is not None else None,
        hybrid=b.get(sc + ("hybrid",), bool),
        beta=b.get(sc + ("beta",), float),
        rho=b.get(sc + ("rho",), float),
        action_set=tuple(int(a) for a in b.get(sc + ("action_set",))),
        min_dedicated=b.get(sc + ("min_dedicated",), int),
        area_size=b.get(sc + ("area_m",), float),
        min_distance=b.get(sc + ("min_distance_m",), float),
        pf_window=b.get(sc + ("pf_window",), int),
    )
    tr = ("train",)
    train_raw = dict(b.get(tr))
    train_raw["hidden"] = tuple(train_raw.get("hidden", (64, 64)))
    unknown = set(train_raw) - set(TrainConfig.__dataclass_fields__)
    if unknown:
        b.fail(tr + (sorted(unknown)[0],), "unknown training option")
    train = b.build(TrainConfig, tr, **train_raw)
    op = b.build(
        OpConfig,
        ("op",),
        grid_step=b.get(("op", "grid_step"), int),
        seeds=tuple(int(s) for s in b.get(("op", "seeds"))),
    )
    if op.grid_step < 1:
        b.fail(("op", "grid_step"), "must be >= 1")
    algorithm = b.get(("algorithm",), str)
    if algorithm not in ALGORITHMS:
        b.fail(("algorithm",), f"must be one of {ALGORITHMS}")
    seeds = b.get(("seeds",))
    if not isinstance(seeds, list) or not seeds:
        b.fail(("seeds",), "expected a nonempty list of integer seeds")
    return ExperimentConfig(
        env=env,
        train=train,
        op=op,
        algorithm=algorithm,
        seeds=tuple(int(s) for s in seeds),
        output=str(b.get(("output",), str)),
        profile=str(tree.get("profile", "paper")),
        raw=tree,
    )


def resolve(user: Optional[dict] = None, profile: Optional[str] = None) -> dict:
    """Defaults, then the profile overrides, then the user's own values."""
    user = user or {}
    name = profile or user.get("profile") or "paper"
    if name not in PROFILES:
        raise ConfigError(f"profile: unknown profile {name!r}, expected one of {sorted(PROFILES)}")
    tree = merge(default_tree(), PROFILES[name])
    tree = merge(tree, user)
    tree["profile"] = name
    return tree


def load_config(
    path=None,
    *,
    profile: Optional[str] = None,
    overrides: Optional[dict] = None,
) -> ExperimentConfig:
    """Load and validate a YAML experiment config.

    ``path=None`` loads the bundled default scenario. ``overrides`` are
    merged last (the CLI uses this for ``--seed``, ``--algorithm``...).
    """
    lines: Dict[Tuple, int] = {}
    user: dict = {}
    source = "<default>"
    if path is not None:
        source = str(path)
        text = Path(path).read_text()
        try:
            user = yaml.safe_load(text) or {}
            lines = _line_map(text)
        except yaml.YAMLError as exc:
            raise ConfigError(f"{source}: parse error: {exc}") from exc
        if not isinstance(user, dict):
            raise ConfigError(f"{source}: top level must be a mapping")
        _check_keys(user, default_tree(), (), lines, source)
    if overrides:
        user = merge(user, overrides)
    tree = resolve(user, profile)
    return build(tree, lines, source)


def _check_keys(user, ref, path, lines, source):
    if isinstance(user, dict) and isinstance(ref, dict):
        for k, v in user.items():
            if k not in ref:
                line = lines.get(path + (k,))
                where = ".".join(str(p) for p in path + (k,))
                raise ConfigError(f"{source}:{line}: {where}: unknown key")
            _check_keys(v, ref[k], path + (k,), lines, source)
    elif isinstance(user, list) and isinstance(ref, list) and ref and isinstance(ref[0], dict):
        union: dict = {}
        for r in ref:
            union = merge(union, r)
        for i, v in enumerate(user):
            _check_keys(v, union, path + (i,), lines, source)


def desk_config(**overrides) -> ExperimentConfig:
    """Bundled scenario at desk scale."""
    return load_config(profile="desk", overrides=overrides or None)
