"""Synthetic cloud-node KPIs with scheduled anomaly injections.

Each node group gets load-modulated baseline signals (AR(1)/Ornstein-Uhlenbeck
noise around a setpoint that follows a time-varying user load) and five rounds of
injections of every anomaly type. All durations are given at nominal (testbed)
scale and divided by ``time_scale`` when laid out on the sample grid.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from datetime import datetime, timedelta
from pathlib import Path
from typing import Mapping

import numpy as np
from scipy.signal import lfilter

from telesto.errors import ConfigError
from telesto.series import ANOMALY_CLASSES, NORMAL, MultivariateSeries, write_dataset

# Memory-leak (x MB every y s) and allocation (x MB) parameters per group type.
GROUP_TYPES = {
    "vims": {"mel_x": 1.0, "mel_y": 3.0, "ama_x": 450.0, "mem_base": 2048.0, "mem_load": 200.0},
    "cs": {"mel_x": 1.0, "mel_y": 3.0, "ama_x": 900.0, "mem_base": 3072.0, "mem_load": 400.0},
    "hypervisor": {"mel_x": 2.0, "mel_y": 3.0, "ama_x": 2000.0, "mem_base": 6144.0, "mem_load": 1200.0},
}

PRIMARY_KPIS = ("cpu_util", "mem_alloc", "disk_read", "disk_write", "net_rx", "net_tx")
DERIVED_KPIS = (
    "cpu_user", "cpu_system", "cpu_iowait", "load_avg", "page_faults", "ctx_switches",
    "mem_cached", "disk_util", "net_pkts_rx", "net_pkts_tx", "interrupts", "tcp_conns",
    "cache_misses", "swap_used",
)
KPI_CATALOG = PRIMARY_KPIS + DERIVED_KPIS

# Well-known physical limits, used as normalization overrides.
KNOWN_BOUNDS = {
    "cpu_util": (0.0, 100.0), "cpu_user": (0.0, 100.0), "cpu_system": (0.0, 100.0),
    "cpu_iowait": (0.0, 100.0), "disk_util": (0.0, 100.0),
    "net_rx": (0.0, 1.25e8), "net_tx": (0.0, 1.25e8),  # 1 GBit/s link, bytes/s
}

# Relative jitter while injected: a disk stressor is burstier than regular traffic,
# a saturated link runs steadily at line rate.
INJECTED_JITTER = {"disk_read": ("ADU", 0.2), "disk_write": ("ADU", 0.2), "net_rx": ("NOL", 0.01)}

AFFECTED_KPIS = {
    "CPU": ("cpu_util",),
    "ADU": ("disk_read", "disk_write"),
    "MEL": ("mem_alloc",),
    "AMA": ("mem_alloc",),
    "NOL": ("net_rx",),
}


@dataclass(frozen=True)
class GroupSpec:
    name: str
    kind: str = "vims"
    n_kpis: int = 12

    def __post_init__(self):
        if self.kind not in GROUP_TYPES:
            raise ConfigError(f"group {self.name!r}: unknown kind {self.kind!r}")
        if not len(PRIMARY_KPIS) <= self.n_kpis <= len(KPI_CATALOG):
            raise ConfigError(
                f"group {self.name!r}: n_kpis must be in [{len(PRIMARY_KPIS)}, {len(KPI_CATALOG)}]"
            )

    @property
    def kpis(self) -> tuple[str, ...]:
        return KPI_CATALOG[: self.n_kpis]


@dataclass(frozen=True)
class ScenarioConfig:
    groups: tuple[GroupSpec, ...] = (GroupSpec("cassandra"),)
    anomalies: tuple[str, ...] = ANOMALY_CLASSES
    sample_rate_hz: float = 2.0
    time_scale: float = 10.0
    normal_lead_s: float = 6 * 3600.0
    injections_per_anomaly: int = 5
    injection_min_s: float = 240.0
    injection_max_s: float = 300.0
    grace_s: float = 60.0
    tail_s: float = 60.0
    max_duration_s: float | None = None  # nominal; None means unbounded
    load_period_s: float = 300.0
    load_variability: float = 0.1
    noise_scale: float = 1.0
    adu_ops: float = 1500.0
    nol_saturation: float = 1.2e8
    nol_ramp_s: float = 30.0
    fault_rate_cap: float = 3000.0  # page faults/s the kernel can service
    start_time: str = "2020-06-01T00:00:00+00:00"
    seed: int = 0

    def __post_init__(self):
        groups = tuple(g if isinstance(g, GroupSpec) else GroupSpec(**g) for g in self.groups)
        object.__setattr__(self, "groups", groups)
        object.__setattr__(self, "anomalies", tuple(self.anomalies))
        if not groups:
            raise ConfigError("scenario needs at least one group")
        if len({g.name for g in groups}) != len(groups):
            raise ConfigError("group names must be unique")
        unknown = set(self.anomalies) - set(AFFECTED_KPIS)
        if unknown:
            raise ConfigError(f"unknown anomaly types {sorted(unknown)}")
        for name in ("sample_rate_hz", "time_scale", "injection_min_s", "injection_max_s",
                     "grace_s", "load_period_s"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        if self.normal_lead_s < 0 or self.tail_s < 0:
            raise ConfigError("normal_lead_s and tail_s must be non-negative")
        if self.injection_min_s > self.injection_max_s:
            raise ConfigError("injection_min_s exceeds injection_max_s")
        if self.injections_per_anomaly < 1:
            raise ConfigError("injections_per_anomaly must be >= 1")

    @classmethod
    def from_dict(cls, data: Mapping) -> "ScenarioConfig":
        known = set(cls.__dataclass_fields__)
        extra = set(data) - known
        if extra:
            raise ConfigError(f"unknown scenario keys {sorted(extra)}")
        data = dict(data)
        if "groups" in data:
            data["groups"] = tuple(GroupSpec(**g) for g in data["groups"])
        return cls(**data)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["groups"] = [asdict(g) for g in self.groups]
        out["anomalies"] = list(self.anomalies)
        return out

    def samples(self, nominal_seconds: float) -> float:
        """Nominal duration expressed in samples of the compressed timeline."""
        return nominal_seconds / self.time_scale * self.sample_rate_hz


@dataclass(frozen=True)
class InjectionRecord:
    anomaly: str
    group: str
    start: float  # seconds on the compressed timeline
    stop: float
    instance: int  # 0-based repetition index of this (anomaly, group)

    @property
    def duration(self) -> float:
        return self.stop - self.start


@dataclass
class InjectionSchedule:
    records: list[InjectionRecord]
    time_scale: float
    sample_rate_hz: float
    duration_s: float  # length of the compressed timeline
    start_time: str = ScenarioConfig.start_time

    def for_group(self, group: str) -> list[InjectionRecord]:
        return [r for r in self.records if r.group == group]

    def num_samples(self) -> int:
        return int(round(self.duration_s * self.sample_rate_hz)) + 1

    def to_json(self) -> dict:
        t0 = datetime.fromisoformat(self.start_time)
        def iso(s):
            return (t0 + timedelta(seconds=s)).isoformat()
        return {
            "time_scale": self.time_scale,
            "sample_rate_hz": self.sample_rate_hz,
            "duration_s": self.duration_s,
            "start_time": self.start_time,
            "injections": [
                {**asdict(r), "start_iso": iso(r.start), "stop_iso": iso(r.stop)} for r in self.records
            ],
        }

    @classmethod
    def from_json(cls, data: Mapping) -> "InjectionSchedule":
        fields = InjectionRecord.__dataclass_fields__
        records = [InjectionRecord(**{k: r[k] for k in fields}) for r in data["injections"]]
        return cls(records, data["time_scale"], data["sample_rate_hz"], data["duration_s"],
                   data["start_time"])


def _group_rng(seed: int, group_index: int, stream: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, group_index, stream]))


def build_schedule(cfg: ScenarioConfig) -> InjectionSchedule:
    """Lay out ``injections_per_anomaly`` rounds of every anomaly per group.

    Each round visits the anomaly types in a seeded random order. Start and stop
    times sit on the sample grid; consecutive injections in a group are separated
    by at least the grace time.
    """
    rate = cfg.sample_rate_hz
    lo = math.ceil(cfg.samples(cfg.injection_min_s) - 1e-9)
    hi = math.floor(cfg.samples(cfg.injection_max_s) + 1e-9)
    if hi < 1 or lo > hi:
        raise ConfigError(
            f"injection duration [{cfg.injection_min_s}, {cfg.injection_max_s}] s does not fit the "
            f"sample grid at time_scale {cfg.time_scale}"
        )
    grace = math.ceil(cfg.samples(cfg.grace_s) - 1e-9)
    lead = math.ceil(cfg.samples(cfg.normal_lead_s) - 1e-9)
    tail = math.ceil(cfg.samples(cfg.tail_s) - 1e-9)

    records = []
    end = 0
    for gi, group in enumerate(cfg.groups):
        rng = _group_rng(cfg.seed, gi, 0)
        k = lead
        for rnd in range(cfg.injections_per_anomaly):
            for anomaly in rng.permutation(cfg.anomalies):
                n = int(rng.integers(lo, hi + 1))
                records.append(InjectionRecord(str(anomaly), group.name, k / rate, (k + n) / rate, rnd))
                k += n + grace
        end = max(end, k - grace + tail)
    duration = end / rate
    if cfg.max_duration_s is not None and duration * cfg.time_scale > cfg.max_duration_s:
        raise ConfigError(
            f"schedule needs {duration * cfg.time_scale:.0f} s nominal, limit is {cfg.max_duration_s} s"
        )
    return InjectionSchedule(records, cfg.time_scale, rate, duration, cfg.start_time)


def anomaly_signature(anomaly: str, params: Mapping[str, float], t_rel, baseline: Mapping[str, np.ndarray]):
    """KPI values during an injection, ``t_rel`` seconds after its start.

    ``baseline`` maps KPI names to their undisturbed values; only the KPIs touched
    by ``anomaly`` are replaced in the returned copy.
    """
    if anomaly not in AFFECTED_KPIS:
        raise ConfigError(f"unknown anomaly type {anomaly!r}")
    t_rel = np.asarray(t_rel, dtype=np.float64)
    out = {k: np.asarray(v, dtype=np.float64) for k, v in baseline.items()}
    ones = np.ones_like(t_rel)
    if anomaly == "CPU":
        out["cpu_util"] = params.get("cpu_target", 90.0) * ones
    elif anomaly == "ADU":
        ops = params.get("adu_ops", 1500.0)
        out["disk_read"] = ops * ones
        out["disk_write"] = ops * ones
    elif anomaly == "MEL":
        out["mem_alloc"] = out["mem_alloc"] + np.floor(t_rel / params["mel_y"] + 1e-9) * params["mel_x"]
    elif anomaly == "AMA":
        out["mem_alloc"] = out["mem_alloc"] + params["ama_x"] * ones
    elif anomaly == "NOL":
        sat = params.get("nol_saturation", 1.2e8)
        frac = np.clip(t_rel / params.get("nol_ramp_s", 30.0), 0.0, 1.0)
        out["net_rx"] = out["net_rx"] + (sat - out["net_rx"]) * frac
    return out


def _ar1(rng, mean: np.ndarray, sigma: float, phi: float) -> np.ndarray:
    """Mean-reverting AR(1) around a moving setpoint with stationary std ``sigma``."""
    eps = rng.standard_normal(len(mean)) * sigma * math.sqrt(1 - phi**2)
    dev = lfilter([1.0], [1.0, -phi], eps)
    return mean + dev


def load_profile(cfg: ScenarioConfig, t: np.ndarray, rng) -> np.ndarray:
    """User load in [0, 1]: slow sinusoid plus a wandering random component."""
    period = cfg.load_period_s / cfg.time_scale
    phase = rng.uniform(0, 2 * math.pi)
    wander = _ar1(rng, np.zeros_like(t), cfg.load_variability * 0.5, 0.995)
    return np.clip(0.5 + cfg.load_variability * np.sin(2 * math.pi * t / period + phase) + wander, 0, 1)


def _signature_params(cfg: ScenarioConfig, group: GroupSpec) -> dict:
    gt = GROUP_TYPES[group.kind]
    return {
        "cpu_target": 90.0,
        "adu_ops": cfg.adu_ops,
        "mel_x": gt["mel_x"],
        "mel_y": gt["mel_y"] / cfg.time_scale,
        "ama_x": gt["ama_x"],
        "nol_saturation": cfg.nol_saturation,
        "nol_ramp_s": cfg.nol_ramp_s / cfg.time_scale,
    }


def generate_group(cfg: ScenarioConfig, schedule: InjectionSchedule, group_index: int) -> MultivariateSeries:
    group = cfg.groups[group_index]
    gt = GROUP_TYPES[group.kind]
    rng = _group_rng(cfg.seed, group_index, 1)
    T = schedule.num_samples()
    rate = cfg.sample_rate_hz
    t = np.arange(T) / rate
    ns = cfg.noise_scale
    load = load_profile(cfg, t, rng)

    base = {
        "cpu_util": _ar1(rng, 10 + 35 * load, 3.0 * ns, 0.9),
        "mem_alloc": _ar1(rng, gt["mem_base"] + gt["mem_load"] * load, 4.0 * ns, 0.98),
        "disk_read": _ar1(rng, 40 + 160 * load, 10.0 * ns, 0.8),
        "disk_write": _ar1(rng, 30 + 120 * load, 8.0 * ns, 0.8),
        "net_rx": _ar1(rng, 2e6 + 2e7 * load, 1e6 * ns, 0.85),
        "net_tx": _ar1(rng, 1e6 + 1.5e7 * load, 8e5 * ns, 0.85),
    }
    sig = _signature_params(cfg, group)
    labels = np.full(T, NORMAL, dtype=object)
    prim = {k: v.copy() for k, v in base.items()}
    for rec in schedule.for_group(group.name):
        a = int(round(rec.start * rate))
        b = int(round(rec.stop * rate))
        idx = slice(a, b + 1)
        window = {k: v[idx] for k, v in base.items()}
        over = anomaly_signature(rec.anomaly, sig, t[idx] - rec.start, window)
        for k in AFFECTED_KPIS[rec.anomaly]:
            prim[k][idx] = over[k]
        labels[idx] = rec.anomaly
    # measurement jitter; disk and network throughput are bursty
    prim["cpu_util"] = np.clip(prim["cpu_util"] + rng.normal(0, 1.0 * ns, T), 0, 100)
    for k, rel in (("disk_read", 0.12), ("disk_write", 0.12), ("net_rx", 0.06), ("net_tx", 0.06)):
        if k in INJECTED_JITTER:
            anomaly, during = INJECTED_JITTER[k]
            rel = np.where(labels == anomaly, during, rel)
        prim[k] = np.maximum(prim[k] * (1 + rng.normal(0, 1, T) * rel * ns), 0)

    cpu, disk = prim["cpu_util"], prim["disk_read"] + prim["disk_write"]
    rx, tx = prim["net_rx"], prim["net_tx"]
    # injected allocations fault in 4 KiB pages; servicing saturates at fault_rate_cap
    injected_mb = prim["mem_alloc"] - base["mem_alloc"]
    width = max(1, int(round(rate)))
    alloc_mb_s = np.convolve(np.maximum(np.diff(injected_mb, prepend=0.0), 0) * rate,
                             np.ones(width) / width, "same")
    cap = cfg.fault_rate_cap
    faults = cap * np.tanh(256 * alloc_mb_s / cap)

    def noise(scale):
        return rng.normal(0, scale * ns, T)

    derived = {
        "cpu_user": np.clip(0.75 * cpu + noise(1.5), 0, 100),
        "cpu_system": np.clip(0.15 * cpu + rx / 1.6e6 + noise(0.8), 0, 100),
        "cpu_iowait": np.clip(disk / 60 + noise(0.5), 0, 100),
        "load_avg": _ar1(rng, cpu / 25, 0.1 * ns, 0.95),
        "page_faults": np.maximum(200 + 100 * load + faults + noise(20), 0),
        "ctx_switches": 1000 + 2000 * load + 100 * cpu + noise(150),
        "mem_cached": _ar1(rng, 800 + 300 * load, 6.0 * ns, 0.98),
        "disk_util": np.clip(disk / 35 + noise(1.0), 0, 100),
        "net_pkts_rx": rx / 1200 + noise(300),
        "net_pkts_tx": tx / 1200 + noise(300),
        "interrupts": 2000 + 3000 * load + rx / 5e4 + disk * 0.5 + noise(100),
        "tcp_conns": _ar1(rng, 50 + 400 * load, 10.0 * ns, 0.95),
        "cache_misses": 1e5 + 2e3 * cpu + noise(5e3),
        "swap_used": _ar1(rng, np.full(T, 10.0), 0.5 * ns, 0.99),
    }
    cols = {**prim, **derived}
    values = np.stack([cols[k] for k in group.kpis])
    return MultivariateSeries(values, group.kpis, rate, labels)


def generate(cfg: ScenarioConfig, schedule: InjectionSchedule | None = None) -> dict[str, MultivariateSeries]:
    """One labeled series per group. Per-group RNG streams derive from ``cfg.seed``."""
    schedule = schedule if schedule is not None else build_schedule(cfg)
    return {g.name: generate_group(cfg, schedule, i) for i, g in enumerate(cfg.groups)}


def write_scenario(cfg: ScenarioConfig, out_dir: str | Path) -> InjectionSchedule:
    """Write one dataset directory per group plus ``schedule.json`` into ``out_dir``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(exist_ok=True)
    schedule = build_schedule(cfg)
    for i, group in enumerate(cfg.groups):
        series = generate_group(cfg, schedule, i)
        overrides = {k: v for k, v in KNOWN_BOUNDS.items() if k in series.series_names}
        write_dataset(out_dir / group.name, series, overrides, cfg.anomalies)
    (out_dir / "schedule.json").write_text(json.dumps(schedule.to_json(), indent=2) + "\n")
    (out_dir / "scenario.json").write_text(json.dumps(cfg.to_dict(), indent=2) + "\n")
    return schedule

