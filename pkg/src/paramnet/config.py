"""Experiment configuration files.

A config is a JSON object. Unknown keys anywhere are rejected, so a typo
fails validation instead of silently falling back to a default. Task
counts, point counts and parameter dimensions may each be a single integer
or a list (the runner then sweeps their product).
"""

from __future__ import annotations

import hashlib
import itertools
import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

from .nn_core import LrSchedule
from .pnn import Architecture, RecalibConfig, TrainConfig
from .taskgen import FAMILIES

BASELINES = ("single", "poly", "poly0")


class ConfigError(ValueError):
    pass


TRAIN_KEYS = {
    "epochs": 8000,
    "batch_size": 32,
    "initial_rate": 0.01,
    "decay_factor": 0.995,
    "decay_every_epochs": 10,
    "input_noise_sigma": 0.0,
    "embedding_init_std": 0.1,
}
RECALIB_KEYS = {"epochs": 100, "batch_size": 10, "rate": 0.01, "init": "mean", "given": None}
ARCH_KEYS = {"hidden_layers": 3, "width": 32, "activation": "selu"}

TOP_KEYS = {
    "family": None,
    "n_train_tasks": 100,
    "n_test_tasks": 250,
    "m_points": 3,
    "param_dim": 3,
    "architecture": {},
    "train": {},
    "recalib": {},
    "baselines": [],
    "seeds": [0],
    "grid_points": 100,
    "noise_sigma": 0.1,
    "tau_reading": "printed",
    "min_maturity_years": 0.02,
    "short_maturity_years": 0.25,
    "histogram_bin_bp": 1.0,
    "error_bound_bp": 10.0,
    "projection_steps": 5,
    "output_dir": None,
    "description": "",
}


def _merge(section: str, given, defaults: dict) -> dict:
    if not isinstance(given, dict):
        raise ConfigError(f"{section} must be an object")
    unknown = set(given) - set(defaults)
    if unknown:
        raise ConfigError(f"unknown key(s) in {section}: {sorted(unknown)}")
    return {**defaults, **given}


def _int_list(name: str, v) -> tuple[int, ...]:
    vals = v if isinstance(v, list) else [v]
    if not vals or not all(isinstance(i, int) and not isinstance(i, bool) for i in vals):
        raise ConfigError(f"{name} must be an integer or a non-empty list of integers")
    return tuple(vals)


@dataclass(frozen=True)
class Cell:
    n_tasks: int
    m_points: int
    param_dim: int
    seed: int

    @property
    def name(self) -> str:
        return f"n{self.n_tasks}_m{self.m_points}_l{self.param_dim}_s{self.seed}"


@dataclass
class ExperimentConfig:
    raw: dict
    family: str
    n_train_tasks: tuple[int, ...]
    n_test_tasks: int
    m_points: tuple[int, ...]
    param_dim: tuple[int, ...]
    arch: Architecture
    train: TrainConfig
    recalib: RecalibConfig
    baselines: tuple[str, ...]
    seeds: tuple[int, ...]
    output_dir: str | None = None
    options: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, doc: dict) -> ExperimentConfig:
        if not isinstance(doc, dict):
            raise ConfigError("config must be a JSON object")
        d = _merge("config", doc, TOP_KEYS)
        if d["family"] not in FAMILIES:
            raise ConfigError(f"family must be one of {FAMILIES}")
        a = _merge("architecture", d["architecture"], ARCH_KEYS)
        t = _merge("train", d["train"], TRAIN_KEYS)
        r = _merge("recalib", d["recalib"], RECALIB_KEYS)
        try:
            arch = Architecture(int(a["hidden_layers"]), int(a["width"]), a["activation"])
            if arch.activation not in ("selu", "identity") or arch.width < 1 or arch.hidden_layers < 0:
                raise ConfigError("invalid architecture")
            bs = t["batch_size"]
            if bs == "full":
                bs = None
            train = TrainConfig(
                epochs=int(t["epochs"]),
                batch_size=bs,
                schedule=LrSchedule(float(t["initial_rate"]), float(t["decay_factor"]),
                                    int(t["decay_every_epochs"])),
                input_noise_sigma=float(t["input_noise_sigma"]),
                embedding_init_std=float(t["embedding_init_std"]),
            )
            given = tuple(r["given"]) if r["given"] is not None else None
            recalib = RecalibConfig(int(r["epochs"]), int(r["batch_size"]), float(r["rate"]), r["init"], given)
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(str(exc)) from exc
        baselines = tuple(d["baselines"])
        if any(b not in BASELINES for b in baselines):
            raise ConfigError(f"baselines must be drawn from {BASELINES}")
        if d["family"] in ("interdep", "bond") and set(baselines) & {"poly", "poly0"}:
            raise ConfigError("polynomial baselines need a one-dimensional family")
        n_train = _int_list("n_train_tasks", d["n_train_tasks"])
        m_points = _int_list("m_points", d["m_points"])
        param_dim = _int_list("param_dim", d["param_dim"])
        seeds = _int_list("seeds", d["seeds"])
        if min(n_train) < 1 or min(m_points) < 1 or min(param_dim) < 0:
            raise ConfigError("task/point counts must be positive and param_dim non-negative")
        if int(d["n_test_tasks"]) < 1 or int(d["grid_points"]) < 2:
            raise ConfigError("n_test_tasks >= 1 and grid_points >= 2 required")
        if d["family"] == "interdep" and m_points != (5,):
            raise ConfigError("interdep tasks always have 5 points (3 + 2)")
        if d["tau_reading"] not in ("printed", "own"):
            raise ConfigError("tau_reading must be 'printed' or 'own'")
        if d["noise_sigma"] < 0:
            raise ConfigError("noise_sigma must be >= 0")
        options = {k: d[k] for k in (
            "grid_points", "noise_sigma", "tau_reading", "min_maturity_years",
            "short_maturity_years", "histogram_bin_bp", "error_bound_bp", "projection_steps",
        )}
        return cls(
            raw=d, family=d["family"], n_train_tasks=n_train, n_test_tasks=int(d["n_test_tasks"]),
            m_points=m_points, param_dim=param_dim, arch=arch, train=train, recalib=recalib,
            baselines=baselines, seeds=seeds, output_dir=d["output_dir"], options=options,
        )

    def with_overrides(self, seed=None, output_dir=None) -> ExperimentConfig:
        doc = dict(self.raw)
        if seed is not None:
            doc["seeds"] = [int(seed)]
        if output_dir is not None:
            doc["output_dir"] = str(output_dir)
        return ExperimentConfig.from_dict(doc)

    def to_dict(self) -> dict:
        """Resolved config without the output location, so run directories can be moved."""
        return {k: v for k, v in self.raw.items() if k != "output_dir"}

    @property
    def fingerprint(self) -> str:
        """Hash of every field that affects numbers (output location excluded)."""
        doc = {k: v for k, v in self.raw.items() if k not in ("output_dir", "description")}
        return hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).hexdigest()[:16]

    def cells(self):
        for n, m, l, s in itertools.product(self.n_train_tasks, self.m_points, self.param_dim, self.seeds):
            yield Cell(n, m, l, s)

    def data_keys(self):
        """(m_points, seed) pairs; one train/test task set each."""
        return list(itertools.product(self.m_points, self.seeds))

    def gen_options(self) -> dict:
        o = self.options
        return {"noise_sigma": o["noise_sigma"], "tau_reading": o["tau_reading"],
                "min_maturity_years": o["min_maturity_years"]}


def load_config(source: str | Path) -> ExperimentConfig:
    """Read a config file, or a bundled preset given as ``preset:<name>``."""
    source = str(source)
    try:
        if source.startswith("preset:"):
            name = source.split(":", 1)[1]
            text = resources.files("paramnet.presets").joinpath(f"{name}.json").read_text(encoding="utf-8")
        else:
            text = Path(source).read_text(encoding="utf-8")
    except (FileNotFoundError, OSError) as exc:
        raise FileNotFoundError(f"config not found: {source}") from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON in {source}: {exc}") from exc
    return ExperimentConfig.from_dict(doc)


def preset_names() -> list[str]:
    return sorted(p.name[:-5] for p in resources.files("paramnet.presets").iterdir() if p.name.endswith(".json"))
