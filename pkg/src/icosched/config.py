"""Run configuration: nested dataclasses loaded from / dumped to YAML.

Unknown keys and out-of-range values raise :class:`ConfigError` carrying the
dotted path of the offending key (``sim.contention.rho0``).
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
import typing
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import yaml

from .errors import ConfigError


@dataclass
class OnlineKind:
    name: str
    cpu_slope: float  # cores per qps
    cpu_intercept: float  # cores
    mem_slope: float  # GiB per qps
    mem_intercept: float  # GiB
    base_ms: float
    threads_per_qps: float
    qps_min: float
    qps_max: float

    def validate(self, key):
        _positive(self, key, "base_ms", "threads_per_qps", "qps_min", "qps_max")
        _non_negative(self, key, "cpu_slope", "cpu_intercept", "mem_slope", "mem_intercept")
        if self.qps_max < self.qps_min:
            raise ConfigError(f"{key}.qps_max", "must be >= qps_min")


@dataclass
class OfflineKind:
    name: str
    cores: float
    mem_gib: float
    duration_min_s: float
    duration_max_s: float
    threads_per_core: float

    def validate(self, key):
        _positive(self, key, "cores", "mem_gib", "duration_min_s", "duration_max_s", "threads_per_core")
        if self.duration_max_s < self.duration_min_s:
            raise ConfigError(f"{key}.duration_max_s", "must be >= duration_min_s")


@dataclass
class ContentionParams:
    lambda0: float = 20.0  # ns, latency floor
    lambda1: float = 400.0  # ns, growth coefficient past the knee
    rho0: float = 0.5  # runnable threads per core where latency starts to grow
    gamma: float = 2.0
    dispersion: float = 0.5  # coefficient of variation of per-event latency
    load_jitter: float = 0.2  # coefficient of variation of a batch job's thread intensity, fixed per job
    n_samples: int = 1000  # latency events drawn per service per window

    def validate(self, key):
        _positive(self, key, "lambda1", "gamma", "n_samples")
        _non_negative(self, key, "lambda0", "rho0", "dispersion", "load_jitter")


@dataclass
class ResponseParams:
    s0: float = 1.0
    s1: float = 5.0
    sigma_ms: float = 2.0

    def validate(self, key):
        _positive(self, key, "s0")
        _non_negative(self, key, "s1", "sigma_ms")


@dataclass
class QpsWalkParams:
    """Mean-reverting walk; step, floor and cap are fractions of the target."""

    step_frac: float = 0.15
    floor_frac: float = 0.5
    cap_frac: float = 1.5
    kappa: float = 0.1

    def validate(self, key):
        _non_negative(self, key, "step_frac", "floor_frac", "kappa")
        if self.cap_frac < self.floor_frac:
            raise ConfigError(f"{key}.cap_frac", "must be >= floor_frac")
        if self.kappa > 1:
            raise ConfigError(f"{key}.kappa", "must be <= 1")


def _default_online_kinds():
    return [
        OnlineKind("web-search", 0.006, 0.3, 0.004, 1.0, 25.0, 0.012, 200, 400),
        OnlineKind("web-serving", 0.0045, 0.225, 0.002, 0.5, 15.0, 0.010, 150, 350),
        OnlineKind("data-caching", 0.003, 0.15, 0.010, 2.0, 5.0, 0.008, 300, 600),
        OnlineKind("media-streaming", 0.0075, 0.375, 0.003, 1.0, 40.0, 0.014, 100, 250),
    ]


def _default_offline_kinds():
    return [
        OfflineKind("graph-analytics", 3, 9, 600, 1800, 4.0),
        OfflineKind("in-memory-analytics", 6, 18, 900, 2400, 3.0),
        OfflineKind("batch-small", 2, 3, 300, 900, 4.0),
    ]


@dataclass
class SimConfig:
    n_nodes: int = 8
    node_cores: float = 16
    node_mem_gib: float = 64
    window_s: float = 60
    horizon_s: float = 3600
    arrival_mean_s: float = 120  # mean pod inter-arrival time
    online_fraction: float = 0.7
    # "background": batch jobs land on a random node with room, identically
    # for every policy; "policy": the policy under test places them too
    offline_scheduling: str = "policy"
    initial_offline_jobs: int = 8
    online_lifetime_s: Optional[float] = 2400  # None: online services never leave
    request_sample_fraction: float = 0.002  # fraction of qps * window emitted as request records
    demand_noise: float = 0.02  # relative noise on measured CPU/MEM usage
    qps_profile_csv: Optional[str] = None
    contention: ContentionParams = field(default_factory=ContentionParams)
    response: ResponseParams = field(default_factory=ResponseParams)
    qps_walk: QpsWalkParams = field(default_factory=QpsWalkParams)
    online_kinds: list[OnlineKind] = field(default_factory=_default_online_kinds)
    offline_kinds: list[OfflineKind] = field(default_factory=_default_offline_kinds)

    @property
    def n_windows(self) -> int:
        return int(math.ceil(self.horizon_s / self.window_s - 1e-9))

    def validate(self, key):
        _positive(self, key, "n_nodes", "node_cores", "node_mem_gib", "window_s", "horizon_s", "arrival_mean_s")
        _non_negative(self, key, "initial_offline_jobs", "demand_noise")
        if not 0 <= self.online_fraction <= 1:
            raise ConfigError(f"{key}.online_fraction", "must be in [0, 1]")
        if not 0 < self.request_sample_fraction <= 1:
            raise ConfigError(f"{key}.request_sample_fraction", "must be in (0, 1]")
        if self.offline_scheduling not in ("background", "policy"):
            raise ConfigError(f"{key}.offline_scheduling", "must be 'background' or 'policy'")
        if self.online_lifetime_s is not None and self.online_lifetime_s <= 0:
            raise ConfigError(f"{key}.online_lifetime_s", "must be positive or null")
        if self.horizon_s < 10 * self.window_s:
            raise ConfigError(f"{key}.horizon_s", "must cover at least 10 windows")
        if not self.online_kinds:
            raise ConfigError(f"{key}.online_kinds", "need at least one online kind")
        if not self.offline_kinds:
            raise ConfigError(f"{key}.offline_kinds", "need at least one offline kind")
        names = [k.name for k in self.online_kinds] + [k.name for k in self.offline_kinds]
        if len(set(names)) != len(names):
            raise ConfigError(f"{key}.online_kinds", "kind names must be unique")
        for i, k in enumerate(self.offline_kinds):
            if k.cores > self.node_cores or k.mem_gib > self.node_mem_gib:
                raise ConfigError(f"{key}.offline_kinds[{i}]", "job larger than a node")


@dataclass
class InterferenceSection:
    w_a: float = 2.0
    w_b: float = 1.5
    w_c: float = 1.0
    norm_ns: float = 995.0

    def validate(self, key):
        if not self.w_a > 1:
            raise ConfigError(f"{key}.w_a", "must be > 1")
        if not self.w_b > 1:
            raise ConfigError(f"{key}.w_b", "must be > 1")
        _positive(self, key, "w_c", "norm_ns")


@dataclass
class SchedulerSection:
    w_d: float = 1.2
    w_e: float = 1.25
    cpu_threshold: float = 0.70
    mem_threshold: float = 0.80

    def validate(self, key):
        for name in ("w_d", "w_e"):
            if not getattr(self, name) > 1:
                raise ConfigError(f"{key}.{name}", "must be > 1")
        for name in ("cpu_threshold", "mem_threshold"):
            if not 0 < getattr(self, name) <= 1:
                raise ConfigError(f"{key}.{name}", "must be in (0, 1]")


@dataclass
class ForestSection:
    n_trees: int = 100
    max_depth: int = 12
    min_samples_leaf: int = 5
    features_per_split: int = 82

    def validate(self, key):
        _positive(self, key, "n_trees", "max_depth", "min_samples_leaf")
        if not 1 <= self.features_per_split <= 246:
            raise ConfigError(f"{key}.features_per_split", "must be in [1, 246]")


@dataclass
class DatasetSection:
    """Randomised simulator runs that produce latency training samples."""

    n_runs: int = 340
    windows_per_run: int = 40
    nodes_min: int = 3
    nodes_max: int = 8
    arrival_mean_min_s: float = 4
    arrival_mean_max_s: float = 15
    online_lifetime_s: float = 400
    initial_offline_max: int = 12
    test_fraction: float = 0.2
    resource_samples: int = 200  # per online kind, for the QPS -> CPU/MEM lines

    def validate(self, key):
        _positive(self, key, "n_runs", "windows_per_run", "nodes_min", "nodes_max",
                  "arrival_mean_min_s", "arrival_mean_max_s", "online_lifetime_s", "resource_samples")
        _non_negative(self, key, "initial_offline_max")
        if self.nodes_max < self.nodes_min:
            raise ConfigError(f"{key}.nodes_max", "must be >= nodes_min")
        if self.arrival_mean_max_s < self.arrival_mean_min_s:
            raise ConfigError(f"{key}.arrival_mean_max_s", "must be >= arrival_mean_min_s")
        if self.windows_per_run < 10:
            raise ConfigError(f"{key}.windows_per_run", "must be >= 10")
        if not 0 < self.test_fraction < 1:
            raise ConfigError(f"{key}.test_fraction", "must be in (0, 1)")


@dataclass
class ExperimentSection:
    n_seeds: int = 5
    policies: list[str] = field(default_factory=lambda: ["ico", "rr", "hup", "lqp"])

    def validate(self, key):
        _positive(self, key, "n_seeds")
        for i, p in enumerate(self.policies):
            if p not in ("ico", "rr", "hup", "lqp"):
                raise ConfigError(f"{key}.policies[{i}]", f"unknown policy {p!r}")
        if len(set(self.policies)) != len(self.policies) or not self.policies:
            raise ConfigError(f"{key}.policies", "must be a non-empty list without repeats")


@dataclass
class MotivationSection:
    """Single-node sweeps: batch cores at fixed QPS, then QPS at fixed cores."""

    node_cores: float = 32
    node_mem_gib: float = 64
    online_kind: str = "web-search"
    offline_kind: str = "in-memory-analytics"
    fixed_qps: float = 300
    offline_cores_start: float = 2
    offline_cores_step: float = 2
    qps_start: float = 200
    qps_step: float = 200
    fixed_offline_cores: float = 8
    n_points: int = 10
    windows_per_point: int = 3

    def validate(self, key):
        _positive(self, key, "node_cores", "node_mem_gib", "fixed_qps", "offline_cores_start",
                  "qps_start", "fixed_offline_cores", "windows_per_point")
        _non_negative(self, key, "offline_cores_step", "qps_step")
        if self.n_points < 1:
            raise ConfigError(f"{key}.n_points", "must be >= 1")


@dataclass
class Config:
    seed: int = 42
    sim: SimConfig = field(default_factory=SimConfig)
    interference: InterferenceSection = field(default_factory=InterferenceSection)
    scheduler: SchedulerSection = field(default_factory=SchedulerSection)
    forest: ForestSection = field(default_factory=ForestSection)
    dataset: DatasetSection = field(default_factory=DatasetSection)
    experiment: ExperimentSection = field(default_factory=ExperimentSection)
    motivation: MotivationSection = field(default_factory=MotivationSection)

    def validate(self, key=""):
        if not 0 <= self.seed < 2**63:
            raise ConfigError("seed", "must be a non-negative 63-bit integer")
        kinds = {k.name for k in self.sim.online_kinds}
        if self.motivation.online_kind not in kinds:
            raise ConfigError("motivation.online_kind", f"not among sim.online_kinds: {sorted(kinds)}")
        if self.motivation.offline_kind not in {k.name for k in self.sim.offline_kinds}:
            raise ConfigError("motivation.offline_kind", "not among sim.offline_kinds")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False, default_flow_style=False)

    def digest(self) -> str:
        """Short content hash of the resolved config (seed excluded)."""
        d = self.to_dict()
        d.pop("seed")
        blob = json.dumps(_canonical(d), sort_keys=True, separators=(",", ":")).encode()
        return hashlib.sha256(blob).hexdigest()[:12]

    def with_seed(self, seed: int) -> Config:
        return dataclasses.replace(self, seed=seed)


def _canonical(value):
    # 4 and 4.0 must hash alike: defaults may be ints where a loaded file gives floats
    if isinstance(value, dict):
        return {k: _canonical(v) for k, v in value.items()}
    if isinstance(value, list):
        return [_canonical(v) for v in value]
    if isinstance(value, int) and not isinstance(value, bool):
        return float(value)
    return value


def _positive(obj, key, *names):
    for name in names:
        if not getattr(obj, name) > 0:
            raise ConfigError(f"{key}.{name}".lstrip("."), "must be positive")


def _non_negative(obj, key, *names):
    for name in names:
        if not getattr(obj, name) >= 0:
            raise ConfigError(f"{key}.{name}".lstrip("."), "must be non-negative")


def _coerce(tp, value, key):
    origin = typing.get_origin(tp)
    if origin is typing.Union:
        args = [a for a in typing.get_args(tp) if a is not type(None)]
        if value is None:
            return None
        return _coerce(args[0], value, key)
    if origin is list:
        (item_tp,) = typing.get_args(tp)
        if not isinstance(value, list):
            raise ConfigError(key, "expected a list")
        return [_coerce(item_tp, v, f"{key}[{i}]") for i, v in enumerate(value)]
    if dataclasses.is_dataclass(tp):
        return _build(tp, value, key)
    if tp is bool:
        if not isinstance(value, bool):
            raise ConfigError(key, "expected true/false")
        return value
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(key, f"expected an integer, got {value!r}")
        return value
    if tp is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(key, f"expected a number, got {value!r}")
        if not math.isfinite(value):
            raise ConfigError(key, "must be finite")
        return float(value)
    if tp is str:
        if not isinstance(value, str):
            raise ConfigError(key, f"expected a string, got {value!r}")
        return value
    raise TypeError(f"unsupported config type {tp}")


def _build(cls, data, prefix):
    if not isinstance(data, dict):
        raise ConfigError(prefix or "<root>", "expected a mapping")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    for k in data:
        if k not in names:
            raise ConfigError(f"{prefix}.{k}".lstrip("."), "unknown key")
    kwargs = {}
    for f in dataclasses.fields(cls):
        key = f"{prefix}.{f.name}".lstrip(".")
        if f.name in data:
            kwargs[f.name] = _coerce(hints[f.name], data[f.name], key)
        elif f.default is dataclasses.MISSING and f.default_factory is dataclasses.MISSING:
            raise ConfigError(key, "required key is missing")
    obj = cls(**kwargs)
    obj.validate(prefix)
    if isinstance(obj, Config):
        _validate_nested(obj)
    return obj


def _validate_nested(cfg: Config):
    for name in ("sim", "interference", "scheduler", "forest", "dataset", "experiment", "motivation"):
        getattr(cfg, name).validate(name)
    for i, k in enumerate(cfg.sim.online_kinds):
        k.validate(f"sim.online_kinds[{i}]")
    for i, k in enumerate(cfg.sim.offline_kinds):
        k.validate(f"sim.offline_kinds[{i}]")
    for name in ("contention", "response", "qps_walk"):
        getattr(cfg.sim, name).validate(f"sim.{name}")


def config_from_dict(data: dict) -> Config:
    return _build(Config, data or {}, "")


def load_config(path) -> Config:
    path = Path(path)
    if not path.is_file():
        raise ConfigError("config", f"file not found: {path}")
    try:
        data = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ConfigError("config", f"cannot parse {path}: {exc}") from None
    return config_from_dict(data)


def default_config() -> Config:
    cfg = Config()
    _validate_nested(cfg)
    cfg.validate()
    return cfg
