import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from telesto.errors import ConfigError
from telesto.injector import (
    AFFECTED_KPIS,
    KNOWN_BOUNDS,
    GroupSpec,
    InjectionSchedule,
    ScenarioConfig,
    anomaly_signature,
    build_schedule,
    generate,
    write_scenario,
)
from telesto.series import NORMAL, label_intervals, read_dataset

BASE = {"cpu_util": np.array([20.0]), "mem_alloc": np.array([2000.0]), "disk_read": np.array([50.0]),
        "disk_write": np.array([40.0]), "net_rx": np.array([1e7]), "net_tx": np.array([5e6])}
PARAMS = {"mel_x": 1.0, "mel_y": 3.0, "ama_x": 450.0}


def fast(**kw):
    return ScenarioConfig(**{"normal_lead_s": 600.0, **kw})


class TestSignature:
    def test_mel_staircase(self):
        out = anomaly_signature("MEL", PARAMS, 10.0, BASE)
        assert out["mem_alloc"][0] == 2003.0  # floor(10 / 3) * 1 MB

    def test_mel_steps(self):
        out = anomaly_signature("MEL", PARAMS, np.array([0.0, 2.9, 3.0, 5.9, 6.0]), {"mem_alloc": np.zeros(5)})
        assert out["mem_alloc"].tolist() == [0, 0, 1, 1, 2]

    @pytest.mark.parametrize("t_rel", [0.0, 1.0, 200.0])
    def test_ama_constant_offset(self, t_rel):
        assert anomaly_signature("AMA", PARAMS, t_rel, BASE)["mem_alloc"][0] == 2450.0

    def test_cpu_setpoint_independent_of_time(self):
        assert anomaly_signature("CPU", PARAMS, 0.0, BASE)["cpu_util"] == 90.0
        assert anomaly_signature("CPU", PARAMS, 200.0, BASE)["cpu_util"] == 90.0

    def test_adu_constant_high(self):
        out = anomaly_signature("ADU", {"adu_ops": 1500.0}, np.arange(3.0), BASE)
        assert out["disk_read"].tolist() == out["disk_write"].tolist() == [1500.0] * 3

    def test_nol_ramps_to_saturation(self):
        out = anomaly_signature("NOL", {"nol_saturation": 1.2e8, "nol_ramp_s": 30.0},
                                np.array([0.0, 15.0, 30.0, 60.0]), {"net_rx": np.full(4, 1e7)})
        np.testing.assert_allclose(out["net_rx"], [1e7, 6.5e7, 1.2e8, 1.2e8])
        assert out["net_rx"].max() < KNOWN_BOUNDS["net_rx"][1]

    @pytest.mark.parametrize("anomaly", list(AFFECTED_KPIS))
    def test_unaffected_kpis_keep_baseline(self, anomaly):
        out = anomaly_signature(anomaly, PARAMS, 5.0, BASE)
        for k in BASE:
            if k not in AFFECTED_KPIS[anomaly]:
                assert out[k] == BASE[k]

    def test_unknown(self):
        with pytest.raises(ConfigError):
            anomaly_signature("DNS", PARAMS, 0.0, BASE)


class TestConfig:
    def test_defaults(self):
        cfg = ScenarioConfig()
        assert cfg.sample_rate_hz == 2.0 and cfg.injections_per_anomaly == 5
        assert (cfg.injection_min_s, cfg.injection_max_s, cfg.grace_s) == (240.0, 300.0, 60.0)
        assert cfg.normal_lead_s == 6 * 3600 and cfg.time_scale == 10.0
        assert cfg.groups[0].n_kpis == 12

    @pytest.mark.parametrize("kw", [{"time_scale": 0}, {"anomalies": ("CPU", "XYZ")}, {"groups": ()},
                                    {"injection_min_s": 400.0}])
    def test_invalid(self, kw):
        with pytest.raises(ConfigError):
            ScenarioConfig(**kw)

    def test_group_validation(self):
        with pytest.raises(ConfigError):
            GroupSpec("a", n_kpis=3)
        with pytest.raises(ConfigError):
            GroupSpec("a", kind="router")

    def test_dict_round_trip(self):
        cfg = ScenarioConfig(groups=(GroupSpec("a", "cs", 8), GroupSpec("b")), seed=4)
        assert ScenarioConfig.from_dict(json.loads(json.dumps(cfg.to_dict()))) == cfg
        with pytest.raises(ConfigError):
            ScenarioConfig.from_dict({"seeed": 1})

    def test_duration_limit(self):
        with pytest.raises(ConfigError):
            build_schedule(ScenarioConfig(max_duration_s=3600.0))

    def test_duration_off_grid(self):
        # 240-241 s at 1000x compression is 0.48-0.482 samples: nothing fits
        with pytest.raises(ConfigError):
            build_schedule(ScenarioConfig(time_scale=1000.0, injection_max_s=241.0))


class TestSchedule:
    def test_twenty_five_records(self):
        s = build_schedule(ScenarioConfig())
        assert len(s.records) == 25
        for a in AFFECTED_KPIS:
            assert sorted(r.instance for r in s.records if r.anomaly == a) == [0, 1, 2, 3, 4]

    def test_lead_time(self):
        s = build_schedule(ScenarioConfig())
        assert s.records[0].start * s.time_scale == pytest.approx(6 * 3600)

    def test_deterministic(self):
        assert build_schedule(ScenarioConfig(seed=3)).records == build_schedule(ScenarioConfig(seed=3)).records
        assert build_schedule(ScenarioConfig(seed=3)).records != build_schedule(ScenarioConfig(seed=4)).records

    def test_json_round_trip(self):
        s = build_schedule(fast())
        data = json.loads(json.dumps(s.to_json()))
        assert data["injections"][0]["start_iso"].startswith("2020-06-01T00:01:00")
        assert InjectionSchedule.from_json(data).records == s.records


@given(st.integers(0, 2**32 - 1), st.sampled_from([1.0, 5.0, 10.0, 60.0]), st.integers(1, 3),
       st.integers(1, 5))
def test_schedule_properties(seed, scale, n_groups, n_anomalies):
    anomalies = tuple(AFFECTED_KPIS)[:n_anomalies]
    cfg = ScenarioConfig(groups=tuple(GroupSpec(f"g{i}") for i in range(n_groups)), anomalies=anomalies,
                         time_scale=scale, seed=seed, normal_lead_s=600.0)
    s = build_schedule(cfg)
    assert len(s.records) == 5 * n_anomalies * n_groups
    for g in cfg.groups:
        recs = sorted(s.for_group(g.name), key=lambda r: r.start)
        for a in anomalies:
            assert sum(r.anomaly == a for r in recs) == 5
        for r in recs:
            assert 240 - 1e-6 <= r.duration * scale <= 300 + 1e-6
        for a, b in zip(recs, recs[1:]):
            assert (b.start - a.stop) * scale >= 60 - 1e-6
        assert recs[-1].stop <= s.duration_s


class TestGenerate:
    def test_shapes_and_spacing(self):
        cfg = fast(groups=(GroupSpec("a"), GroupSpec("b", "hypervisor", 20)))
        s = build_schedule(cfg)
        out = generate(cfg, s)
        assert out["a"].values.shape == (12, s.num_samples())
        assert out["b"].d == 20
        np.testing.assert_allclose(np.diff(out["a"].timestamps), 0.5)

    def test_labels_match_schedule(self):
        cfg = fast()
        s = build_schedule(cfg)
        series = generate(cfg, s)["cassandra"]
        got = [(a / 2.0, b / 2.0, c) for a, b, c in label_intervals(series.labels)]
        assert got == [(r.start, r.stop, r.anomaly) for r in s.records]

    def test_normal_period(self):
        cfg = fast()
        s = build_schedule(cfg)
        labels = generate(cfg, s)["cassandra"].labels
        assert set(labels[: int(s.records[0].start * 2)]) == {NORMAL}

    def test_cpu_at_ninety(self):
        series = generate(fast())["cassandra"]
        cpu = series.values[0][series.labels == "CPU"]
        assert abs(cpu.mean() - 90) < 1.0

    def test_deterministic_and_seeded(self):
        a, b = generate(fast(seed=2))["cassandra"], generate(fast(seed=2))["cassandra"]
        assert np.array_equal(a.values, b.values)
        assert not np.array_equal(a.values, generate(fast(seed=3))["cassandra"].values)

    def test_groups_use_independent_streams(self):
        one = generate(fast(groups=(GroupSpec("a"),)))["a"]
        two = generate(fast(groups=(GroupSpec("a"), GroupSpec("b"))))["a"]
        assert np.array_equal(one.values, two.values)

    @pytest.mark.parametrize("seed", range(5))
    def test_injections_shift_affected_kpis(self, seed):
        # every injection moves its KPI by > 3 sigma of the normal samples just before it
        series = generate(ScenarioConfig(seed=seed))["cassandra"]
        for a, b, cls in label_intervals(series.labels):
            pre = slice(a - 11, a)
            assert set(series.labels[pre]) == {NORMAL}
            for k in AFFECTED_KPIS[cls]:
                v = series.values[series.series_names.index(k)]
                assert abs(v[a : b + 1].mean() - v[pre].mean()) > 3 * v[pre].std(), (cls, k, a)


def test_write_scenario(tmp_path):
    cfg = fast()
    write_scenario(cfg, tmp_path / "out")
    ds = read_dataset(tmp_path / "out" / "cassandra")
    assert ds.bounds_overrides["cpu_util"] == [0.0, 100.0]
    assert len(json.loads((tmp_path / "out" / "schedule.json").read_text())["injections"]) == 25
    np.testing.assert_allclose(ds.series.values, generate(cfg)["cassandra"].values, rtol=1e-12)
    assert list(ds.series.labels) == list(generate(cfg)["cassandra"].labels)
