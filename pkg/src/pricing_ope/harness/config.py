"""Experiment configuration with desk-scale and paper-scale presets."""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Optional, Tuple

import yaml

from ..optimize.mlp import MlpConfig

EXPERIMENT_VERSION = 1
KINDS = ("rmse-vs-n", "kernel-scatter", "extrapolation", "policy-gap", "estimator-bias")
ESTIMATORS = ("DM", "IPS", "KIPS-naive", "KIPS-optimal")


@dataclass(frozen=True)
class ExperimentConfig:
    """One experiment run.

    ``environment`` is a path to an environment YAML file, ``None`` for the
    packaged default. ``settings`` lists the h(x) variants to run ("hx",
    "no-hx"). ``dsl_penalty_grid`` holds per-row Lasso penalties lambda; the
    DSL uses tau = 2 * n * m * lambda, picked by held-out KIPS value.
    """

    kind: str
    sample_sizes: Tuple[int, ...]
    replications: int
    seed: int = 0
    environment: Optional[str] = None
    settings: Tuple[str, ...] = ("hx",)
    estimators: Tuple[str, ...] = ESTIMATORS
    basis_degree: int = 2
    moments: str = "oracle"
    target_level: float = 0.0
    reference_size: int = 100_000
    dsl_penalty_grid: Tuple[float, ...] = (1e-4, 1e-3, 1e-2, 1e-1)
    mlp: MlpConfig = field(default_factory=MlpConfig)
    threads: int = 1
    output_dir: str = "results"
    version: int = EXPERIMENT_VERSION

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown experiment kind {self.kind!r}; choose from {KINDS}")
        if self.replications < 1:
            raise ValueError("replications must be at least 1")
        if not self.sample_sizes or min(self.sample_sizes) < 10:
            raise ValueError("sample sizes must be at least 10")
        bad = set(self.settings) - {"hx", "no-hx"}
        if bad or not self.settings:
            raise ValueError(f"settings must be drawn from ('hx', 'no-hx'), got {self.settings}")
        if set(self.estimators) - set(ESTIMATORS):
            raise ValueError(f"estimators must be drawn from {ESTIMATORS}")
        if self.moments not in ("oracle", "plugin"):
            raise ValueError("moments must be 'oracle' or 'plugin'")
        if self.threads < 1:
            raise ValueError("threads must be positive")
        if self.version != EXPERIMENT_VERSION:
            raise ValueError(f"unsupported experiment config version {self.version!r}")
        object.__setattr__(self, "sample_sizes", tuple(int(n) for n in self.sample_sizes))
        object.__setattr__(self, "settings", tuple(self.settings))
        object.__setattr__(self, "estimators", tuple(self.estimators))
        object.__setattr__(self, "dsl_penalty_grid", tuple(float(t) for t in self.dsl_penalty_grid))
        if isinstance(self.mlp, dict):
            object.__setattr__(self, "mlp", MlpConfig(**self.mlp))

    def with_overrides(self, **kw) -> "ExperimentConfig":
        return replace(self, **{k: v for k, v in kw.items() if v is not None})

    def to_dict(self) -> dict:
        d = asdict(self)
        for k, v in d.items():
            if isinstance(v, tuple):
                d[k] = list(v)
        d["mlp"]["hidden"] = list(self.mlp.hidden)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown experiment config keys {sorted(unknown)}")
        d = dict(d)
        if "mlp" in d:
            d["mlp"] = MlpConfig(**d["mlp"])
        return cls(**d)

    def hash(self) -> str:
        """sha256 of the canonical JSON form, excluding output location and thread count."""
        d = self.to_dict()
        d.pop("output_dir")
        d.pop("threads")
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()


def load_experiment(path: str) -> ExperimentConfig:
    with open(path) as fh:
        data = yaml.safe_load(fh)
    if "experiment" in data:
        data = data["experiment"]
    return ExperimentConfig.from_dict(data)


def save_experiment(config: ExperimentConfig, path: str) -> None:
    with open(path, "w") as fh:
        yaml.safe_dump({"experiment": config.to_dict()}, fh, sort_keys=False)


_DESK = {
    "rmse-vs-n": dict(sample_sizes=(2_000, 5_000, 10_000, 20_000, 50_000), replications=200),
    "kernel-scatter": dict(sample_sizes=(50_000,), replications=100, estimators=("KIPS-naive", "KIPS-optimal")),
    "extrapolation": dict(sample_sizes=(20_000,), replications=100, estimators=("KIPS-naive", "KIPS-optimal")),
    "policy-gap": dict(sample_sizes=(100_000,), replications=10, settings=("hx", "no-hx"), reference_size=100_000),
    "estimator-bias": dict(sample_sizes=(100_000,), replications=10, settings=("hx", "no-hx"),
                           reference_size=100_000),
}

_FULL = {
    "rmse-vs-n": dict(sample_sizes=(2_000, 5_000, 10_000, 20_000, 50_000, 100_000, 200_000, 500_000, 1_000_000),
                      replications=200),
    "kernel-scatter": dict(sample_sizes=(500_000,), replications=100, estimators=("KIPS-naive", "KIPS-optimal")),
    "extrapolation": dict(sample_sizes=(100_000,), replications=100, estimators=("KIPS-naive", "KIPS-optimal")),
    "policy-gap": dict(sample_sizes=(1_000_000,), replications=20, settings=("hx", "no-hx"),
                       reference_size=1_000_000),
    "estimator-bias": dict(sample_sizes=(1_000_000,), replications=20, settings=("hx", "no-hx"),
                           reference_size=1_000_000),
}


def desk_scale(kind: str, **overrides) -> ExperimentConfig:
    """Sizes that finish in minutes on a laptop."""
    if kind not in _DESK:
        raise ValueError(f"unknown experiment kind {kind!r}; choose from {KINDS}")
    return ExperimentConfig(kind=kind, **{**_DESK[kind], **overrides})


def paper_scale(kind: str, **overrides) -> ExperimentConfig:
    """Up to a million records per sample; hours of compute."""
    if kind not in _FULL:
        raise ValueError(f"unknown experiment kind {kind!r}; choose from {KINDS}")
    return ExperimentConfig(kind=kind, **{**_FULL[kind], **overrides})
