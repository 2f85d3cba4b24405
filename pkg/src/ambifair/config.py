"""Experiment configuration: one declarative file, six sections.

Defaults reproduce the synthetic benchmark protocol: epsilon 0.02 (0.01 for
CSV sources), a lambda grid of 100 values in [0.1, 1], five split seeds and
64 log-spaced gammas.
Unknown keys are rejected with the dotted path of the offending entry.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, fields, is_dataclass
from pathlib import Path

import yaml

from .errors import ConfigError

PAPER_SEEDS = (1122334455, 2211334455, 1133224455, 3322441155, 1122443355)
METHODS = ("dsc_approx", "amb_approx", "exact_oracle")


@dataclass
class SyntheticSection:
    seed: int = 1122334455
    n_core: int = 4500
    n_sparse: int = 250
    noise_rate: float = 0.0


@dataclass
class CsvSection:
    path: str = ""
    label_column: str = "label"
    sensitive_column: str = "sensitive"
    positive_label_value: str = "1"
    protected_value: str = "0"
    categorical_columns: list = field(default_factory=list)
    ignore_columns: list = field(default_factory=list)
    cluster_column: str | None = None


@dataclass
class DataSection:
    source: str = "synthetic"
    synthetic: SyntheticSection = field(default_factory=SyntheticSection)
    csv: CsvSection = field(default_factory=CsvSection)
    subsample: int | None = None
    subsample_seed: int = 0


@dataclass
class SplitSection:
    ratios: list = field(default_factory=lambda: [0.5, 0.25, 0.25])
    seeds: list = field(default_factory=lambda: list(PAPER_SEEDS))


@dataclass
class GridSection:
    lo: float = 0.1
    hi: float = 1.0
    num: int = 100


@dataclass
class TrainerSection:
    lambda_grid: GridSection = field(default_factory=GridSection)
    max_iters: int = 3000
    grad_tol: float = 1e-7


@dataclass
class GammaSection:
    num: int = 64
    lo: float = 1e-6
    hi: float = 2.0
    spacing: str = "log"


@dataclass
class MultiplicitySection:
    methods: list = field(default_factory=lambda: ["dsc_approx", "amb_approx"])
    epsilon: float | None = None  # 0.02 for synthetic data, 0.01 for CSV data
    table_epsilons: list = field(default_factory=lambda: [0.03, 0.05, 0.09])
    gamma_grid: GammaSection = field(default_factory=GammaSection)
    amb_target_fraction: float = 0.1
    margin: float = 1e-3
    lam: float = 0.0  # L2 strength for proxy sweeps; the proxy objectives carry no penalty
    pool_dsc: bool = True


@dataclass
class FairnessSection:
    kinds: list = field(default_factory=lambda: ["fpr", "fnr"])
    t_grid: GridSection = field(default_factory=lambda: GridSection(0.0, 0.2, 100))


@dataclass
class ReportSection:
    plots: bool = True


@dataclass
class ExperimentConfig:
    name: str = "synthetic"
    data: DataSection = field(default_factory=DataSection)
    split: SplitSection = field(default_factory=SplitSection)
    trainer: TrainerSection = field(default_factory=TrainerSection)
    multiplicity: MultiplicitySection = field(default_factory=MultiplicitySection)
    fairness: FairnessSection = field(default_factory=FairnessSection)
    report: ReportSection = field(default_factory=ReportSection)
    workers: int = 1

    def validate(self) -> "ExperimentConfig":
        if self.data.source not in ("synthetic", "csv"):
            raise ConfigError(f"data.source must be 'synthetic' or 'csv', got {self.data.source!r}", "data.source")
        if self.data.source == "csv" and not self.data.csv.path:
            raise ConfigError("data.csv.path is required for csv sources", "data.csv.path")
        if not 0 <= self.data.synthetic.noise_rate <= 0.5:
            raise ConfigError("noise_rate must lie in [0, 0.5]", "data.synthetic.noise_rate")
        if self.data.subsample is not None and (isinstance(self.data.subsample, bool)
                                                or not isinstance(self.data.subsample, int)
                                                or self.data.subsample < 4):
            raise ConfigError("subsample must be at least 4", "data.subsample")
        r = self.split.ratios
        if len(r) != 3 or any(x <= 0 for x in r) or abs(sum(r) - 1) > 1e-9:
            raise ConfigError("split.ratios must be three positive numbers summing to 1", "split.ratios")
        if not self.split.seeds:
            raise ConfigError("split.seeds must not be empty", "split.seeds")
        eps = self.multiplicity.epsilon
        if eps is None:
            self.multiplicity.epsilon = 0.02 if self.data.source == "synthetic" else 0.01
        elif isinstance(eps, bool) or not isinstance(eps, (int, float)):
            raise ConfigError("multiplicity.epsilon must be a number", "multiplicity.epsilon")
        for m in self.multiplicity.methods:
            if m not in METHODS:
                raise ConfigError(f"unknown method {m!r}", "multiplicity.methods")
        for e in [self.multiplicity.epsilon, *self.multiplicity.table_epsilons]:
            if not 0 <= e <= 1:
                raise ConfigError("epsilon values must lie in [0, 1]", "multiplicity.epsilon")
        if self.multiplicity.lam < 0:
            raise ConfigError("multiplicity.lam must be >= 0", "multiplicity.lam")
        if not 0 < self.multiplicity.amb_target_fraction <= 1:
            raise ConfigError("amb_target_fraction must lie in (0, 1]", "multiplicity.amb_target_fraction")
        if self.multiplicity.gamma_grid.spacing not in ("log", "linear"):
            raise ConfigError("gamma spacing must be 'log' or 'linear'", "multiplicity.gamma_grid.spacing")
        for k in self.fairness.kinds:
            if k not in ("fpr", "fnr"):
                raise ConfigError(f"unknown fairness kind {k!r}", "fairness.kinds")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1", "workers")
        return self

    def to_dict(self) -> dict:
        return _to_dict(self)


def _to_dict(obj):
    if is_dataclass(obj):
        return {f.name: _to_dict(getattr(obj, f.name)) for f in fields(obj)}
    if isinstance(obj, (list, tuple)):
        return [_to_dict(x) for x in obj]
    return obj


def _build(cls, doc, path):
    if doc is None:
        return cls()
    if not isinstance(doc, dict):
        raise ConfigError(f"section {path or '<root>'!r} must be a mapping", path or "<root>")
    known = {f.name: f for f in fields(cls)}
    kwargs = {}
    for key, value in doc.items():
        dotted = f"{path}.{key}" if path else key
        if key not in known:
            raise ConfigError(f"unknown configuration key {dotted!r}", dotted)
        sub = known[key].default_factory() if callable(known[key].default_factory) else None
        if is_dataclass(sub):
            kwargs[key] = _build(type(sub), value, dotted)
        else:
            kwargs[key] = _coerce(known[key], value, dotted, sub)
    return cls(**kwargs)


def _coerce(f, value, dotted, default_obj):
    default = f.default if default_obj is None else default_obj
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{dotted!r} must be a boolean", dotted)
    elif isinstance(default, int) and not isinstance(default, bool):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{dotted!r} must be an integer", dotted)
    elif isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{dotted!r} must be a number", dotted)
        value = float(value)
    elif isinstance(default, list):
        if not isinstance(value, list):
            raise ConfigError(f"{dotted!r} must be a list", dotted)
    elif isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"{dotted!r} must be a string", dotted)
    return value


def config_from_dict(doc: dict) -> ExperimentConfig:
    return _build(ExperimentConfig, doc, "").validate()


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}", "<file>") from None
    try:
        doc = json.loads(text) if path.suffix == ".json" else yaml.safe_load(text)
    except (json.JSONDecodeError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot parse {path}: {exc}", "<file>") from None
    return config_from_dict(doc or {})


PRESETS = {
    # full synthetic protocol: both approximations, five split seeds
    "synthetic": {},
    # one approximation only
    "dsc": {"multiplicity": {"methods": ["dsc_approx"]}},
    "amb": {"multiplicity": {"methods": ["amb_approx"]}},
    # 60 uniformly drawn synthetic points, compared against exact enumeration at epsilon 0.05
    "oracle-60": {
        "name": "oracle-60",
        "data": {"subsample": 60, "subsample_seed": 7},
        "multiplicity": {"methods": ["exact_oracle"], "epsilon": 0.05, "table_epsilons": [0.02, 0.03, 0.09]},
    },
    # a small, fast configuration for smoke tests
    "tiny": {
        "name": "tiny",
        "data": {"synthetic": {"n_core": 200, "n_sparse": 20}},
        "split": {"seeds": [1122334455]},
        "trainer": {"lambda_grid": {"num": 5}},
        "multiplicity": {"gamma_grid": {"num": 8}, "amb_target_fraction": 0.05},
        "fairness": {"t_grid": {"num": 5}},
    },
}


def preset(name: str) -> ExperimentConfig:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}", "<preset>")
    return config_from_dict(dict(PRESETS[name], name=PRESETS[name].get("name", name)))


def resolve_config(spec: str | None) -> ExperimentConfig:
    """``spec`` is a file path, ``preset:<name>`` or None for the defaults."""
    if spec is None:
        return config_from_dict({})
    if spec.startswith("preset:"):
        return preset(spec.split(":", 1)[1])
    return load_config(spec)
