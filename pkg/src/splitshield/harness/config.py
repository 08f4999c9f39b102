"""Experiment configuration read from a TOML file."""
from __future__ import annotations

import os
import sys
from dataclasses import dataclass, field, fields, replace

from ..attack import AttackKind
from ..protect import ProtectionConfig
from ..splitnn import TrainConfig
from .data import DatasetSpec

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

SEED_ENV = "SPLITSHIELD_SEED"


@dataclass
class ModelConfig:
    d: int = 8
    hidden: tuple = ()


@dataclass
class PsuConfig:
    """Ownership of training ids and the group used to align them.

    Each id is held by both parties with probability ``overlap``; the rest
    are split evenly between label-only and feature-only.
    """

    overlap: float = 1.0
    group: str = "safe256"
    run_protocol: bool = True

    def __post_init__(self):
        if not 0 <= self.overlap <= 1:
            raise ValueError("overlap must lie in [0, 1]")


@dataclass
class SynthConfig:
    label: str | None = None  # e.g. "label-majority"
    feature: str | None = None  # e.g. "fea-sampling"
    calibration: str = "none"
    sample_times: int = 1
    k: int = 3
    s: float = 1.0


@dataclass
class SweepConfig:
    param: str = "protection.L"
    values: list = field(default_factory=list)
    seeds: list = field(default_factory=lambda: [0])


@dataclass
class ExperimentConfig:
    seed: int = 0
    output: str = "runs/out"
    dataset: DatasetSpec = field(default_factory=DatasetSpec)
    train_csv: str | None = None
    test_csv: str | None = None
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    attacks: list = field(default_factory=lambda: [AttackKind("norm")])
    protection: ProtectionConfig = field(default_factory=ProtectionConfig)
    psu: PsuConfig | None = None
    synth: SynthConfig | None = None
    sweep: SweepConfig | None = None
    wire: bool = False  # route cut-layer traffic through the framed codec
    raw: dict = field(default_factory=dict, repr=False, compare=False)

    def with_seed(self, seed: int) -> "ExperimentConfig":
        """Copy with every seed derived from ``seed``."""
        return replace(
            self,
            seed=seed,
            dataset=replace(self.dataset, seed=seed),
            train=replace(self.train, seed=seed, protection=replace(self.protection, seed=seed)),
            protection=replace(self.protection, seed=seed),
        )


def _build(cls, table: dict, section: str):
    names = {f.name for f in fields(cls)}
    unknown = set(table) - names
    if unknown:
        raise ValueError(f"[{section}] unknown keys: {', '.join(sorted(unknown))}")
    return cls(**table)


def from_dict(raw: dict) -> ExperimentConfig:
    raw = dict(raw)
    top_keys = {"seed", "output", "wire", "dataset", "model", "train", "attacks", "protection", "psu", "synth", "sweep"}
    unknown = set(raw) - top_keys
    if unknown:
        raise ValueError(f"unknown config sections: {', '.join(sorted(unknown))}")
    seed = int(raw.get("seed", 0))
    ds = dict(raw.get("dataset", {}))
    train_csv, test_csv = ds.pop("csv", None), ds.pop("test_csv", None)
    model = dict(raw.get("model", {}))
    if "hidden" in model:
        model["hidden"] = tuple(model["hidden"])
    prot = _build(ProtectionConfig, {**raw.get("protection", {})}, "protection")
    train = _build(TrainConfig, {**raw.get("train", {})}, "train")
    att = dict(raw.get("attacks", {"kinds": ["norm"]}))
    kinds = att.pop("kinds", ["norm"])
    attacks = [AttackKind(k, **att) if k == "hint" else AttackKind(k) for k in kinds]
    cfg = ExperimentConfig(
        seed=seed,
        output=str(raw.get("output", "runs/out")),
        dataset=_build(DatasetSpec, ds, "dataset"),
        train_csv=train_csv,
        test_csv=test_csv,
        model=_build(ModelConfig, model, "model"),
        train=train,
        attacks=attacks,
        protection=prot,
        psu=_build(PsuConfig, raw["psu"], "psu") if "psu" in raw else None,
        synth=_build(SynthConfig, raw["synth"], "synth") if "synth" in raw else None,
        sweep=_build(SweepConfig, raw["sweep"], "sweep") if "sweep" in raw else None,
        wire=bool(raw.get("wire", False)),
        raw=raw,
    )
    return cfg.with_seed(seed)


def parse_value(text: str):
    """TOML scalar/array if it parses, else the raw string."""
    try:
        return tomllib.loads(f"v = {text}")["v"]
    except tomllib.TOMLDecodeError:
        return text


def set_path(raw: dict, key: str, value) -> dict:
    """Copy of ``raw`` with dotted ``key`` set to ``value``."""
    raw = {k: (dict(v) if isinstance(v, dict) else v) for k, v in raw.items()}
    parts = key.strip().split(".")
    node = raw
    for p in parts[:-1]:
        node = node.setdefault(p, {})
        if not isinstance(node, dict):
            raise ValueError(f"{key!r} does not name a config field")
    node[parts[-1]] = value
    return raw


def apply_overrides(raw: dict, overrides) -> dict:
    """Apply ``section.key=value`` strings to a raw config dict."""
    for item in overrides or ():
        key, sep, val = item.partition("=")
        if not sep:
            raise ValueError(f"override {item!r} is not key=value")
        raw = set_path(raw, key, parse_value(val.strip()))
    return raw


def load_raw(path) -> dict:
    with open(path, "rb") as fh:
        return tomllib.load(fh)


def load_config(path=None, overrides=(), env=None) -> ExperimentConfig:
    """Read ``path`` (or defaults), apply overrides, then the seed env var."""
    raw = load_raw(path) if path else {}
    raw = apply_overrides(raw, overrides)
    env = os.environ if env is None else env
    if env.get(SEED_ENV):
        raw["seed"] = int(env[SEED_ENV])
    return from_dict(raw)
