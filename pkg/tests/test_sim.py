import os
import subprocess
import sys
from dataclasses import replace

import numpy as np
import pytest
import scipy.stats
from hypothesis import given, settings
from hypothesis import strategies as st

from edgeharvest import _pycore, kernels
from edgeharvest.energy import EnergyMdf
from edgeharvest.planner import RiskCache, ScheduleWeights
from edgeharvest.sim import DROP, SimConfig, Topology, dispatch, run, sweep

from .conftest import small_profile


def point(prof, units):
    return prof.with_arrival(EnergyMdf.point(units))


def small_net(his=((2, 4, 8), (3, 6)), **kw):
    layers = [[small_profile(hi=h) for h in row] for row in his]
    kw.setdefault("p", 0.4)
    kw.setdefault("horizon", 200)
    kw.setdefault("replications", 20)
    return SimConfig(Topology(layers), **kw)


class TestExamples:
    def test_no_jobs(self):
        m = run(small_net(p=0.0))
        assert np.all(m.arrived == 0) and np.all(m.completed == 0) and np.all(m.throughput == 1)

    def test_single_fast_device_keeps_up(self):
        dev = point(small_profile(), 20)
        m = run(SimConfig(Topology([[dev]]), p=1.0, horizon=100, mode_policy=3, replications=3))
        assert np.all(m.arrived == 100)
        assert np.all(m.completed + m.inflight == 100)
        assert np.all(m.dropped == 0) and np.all(m.inflight <= 1)
        assert np.all(m.downtime_fraction == 0)

    def test_dynamic_between_fixed_modes(self, default_config):
        cfg = default_config.sim_config(p=1.0, replications=50, policy="uniform")
        done = {mode: run(replace(cfg, mode_policy=mode)).completed.mean() for mode in (1, 3, "dynamic")}
        assert done[1] <= done["dynamic"] <= done[3]

    def test_slot_accounting_runs(self):
        m = run(small_net(accounting="slot"))
        assert m.conserved()

    @pytest.mark.parametrize(
        "kw",
        [dict(p=1.5), dict(horizon=0), dict(policy="greedy"), dict(accounting="lazy"), dict(replications=0)],
    )
    def test_invalid_config(self, kw):
        with pytest.raises(ValueError):
            small_net(**kw)

    def test_empty_layer(self):
        with pytest.raises(ValueError):
            Topology([[small_profile()], []])


class TestDispatch:
    W = ScheduleWeights(("d1", "d2", "d3"), (0.5, 0.3, 0.2))

    def test_renormalises_over_eligible(self):
        rng = np.random.default_rng(7)
        n = 100_000
        picks = [dispatch(self.W, ("d2", "d3"), rng) for _ in range(n)]
        share = picks.count("d2") / n
        # 0.3 / 0.5, with a standard error near 0.0015
        assert share == pytest.approx(0.6, abs=0.007)
        assert "d1" not in picks

    def test_drop_when_none_eligible(self):
        assert dispatch(self.W, (), np.random.default_rng(0)) == DROP

    def test_single_eligible(self):
        rng = np.random.default_rng(0)
        assert {dispatch(self.W, ("d3",), rng) for _ in range(50)} == {"d3"}


@pytest.mark.parametrize("policy", ["uniform", "long_term", "adaptive"])
def test_conservation_and_bounds(policy):
    m = run(small_net(policy=policy, p=0.8))
    assert m.conserved()
    for name in ("downtime_fraction", "mean_battery_fraction", "low_energy_fraction", "throughput"):
        v = getattr(m, name)
        assert np.all((v >= 0) & (v <= 1)), name
    assert np.all(m.inflight <= len(m.weights) * 2)


@settings(max_examples=15)
@given(st.floats(0, 1), st.integers(1, 150), st.integers(0, 2**31), st.sampled_from(["uniform", "long_term", "adaptive"]))
def test_conservation_property(p, horizon, seed, policy):
    m = run(small_net(p=p, horizon=horizon, seed=seed, policy=policy, replications=3))
    assert m.conserved()
    assert np.all(m.arrived <= horizon)


def test_deterministic():
    cfg = small_net(policy="adaptive")
    a, b = run(cfg), run(cfg)
    np.testing.assert_array_equal(a.completed, b.completed)
    np.testing.assert_array_equal(a.device_downtime, b.device_downtime)
    c = run(replace(cfg, seed=1))
    assert not np.array_equal(a.completed, c.completed)


def test_workers_do_not_change_results():
    cfg = small_net(policy="long_term", replications=7)
    a = run(cfg)
    b = run(replace(cfg, workers=2))
    for name in ("arrived", "completed", "dropped", "device_downtime", "battery_trace"):
        np.testing.assert_array_equal(getattr(a, name), getattr(b, name))


@pytest.mark.skipif(kernels.BACKEND != "compiled", reason="extension not built")
@pytest.mark.parametrize("accounting", ["stage", "slot"])
@pytest.mark.parametrize("policy", ["uniform", "long_term", "adaptive"])
def test_compiled_matches_python(monkeypatch, accounting, policy):
    cfg = small_net(policy=policy, accounting=accounting, replications=5, record_states=True)
    fast = run(cfg)
    monkeypatch.setattr(kernels, "simulate", _pycore.simulate)
    slow = run(cfg)
    for name in ("arrived", "completed", "dropped", "inflight", "device_downtime", "battery_trace", "state_counts"):
        np.testing.assert_array_equal(getattr(fast, name), getattr(slow, name), err_msg=name)


def test_stage_counts_between_slots_and_slowest_stage():
    cfg = small_net(record_states=True, replications=4)
    m = run(cfg)
    per_device = m.state_counts.sum(axis=(1, 2))
    slots = cfg.horizon * cfg.replications
    # one count per stage start; stages last between 1 and 3 slots
    assert np.all(per_device <= slots) and np.all(3 * per_device >= slots)


def test_identical_devices_uniform_equals_long_term():
    dev = small_profile(hi=5)
    cfg = SimConfig(Topology([[dev] * 3]), p=0.5, horizon=200, replications=200, seed=3)
    u = run(cfg)
    lt = run(replace(cfg, policy="long_term"))
    assert lt.weights == pytest.approx((1 / 3,) * 3)
    assert scipy.stats.ks_2samp(u.throughput, lt.throughput).pvalue > 0.01


def test_throughput_grows_with_energy():
    base = small_profile()
    tps = []
    for hi in (2, 6, 12):
        layer = [point(base, hi // 2), small_profile(hi=hi)]
        m = run(SimConfig(Topology([layer]), p=0.6, horizon=300, replications=30, policy="long_term"))
        tps.append(m.throughput.mean())
    assert tps == sorted(tps) and tps[0] < tps[-1]


def test_single_point_sweep_matches_run():
    cfg = small_net(replications=5)
    rows = sweep(cfg, "p", [0.7], ["uniform", "adaptive"], cache=RiskCache())
    for row in rows:
        direct = run(replace(cfg, p=0.7, policy=row["policy"])).summary()
        assert {k: row[k] for k in direct} == direct


def test_sweep_rejects_bad_input():
    cfg = small_net()
    with pytest.raises(ValueError):
        sweep(cfg, "p", [])
    with pytest.raises(ValueError):
        sweep(cfg, "temperature", [1.0])
    with pytest.raises(ValueError):
        sweep(cfg, "energy", [1.0])


def test_adaptive_downtime_at_full_load(default_config):
    m = run(default_config.sim_config(p=1.0, policy="adaptive", replications=200))
    assert m.downtime_fraction.mean() <= 0.05


def test_pure_python_fallback_selected_at_import():
    code = "from edgeharvest import kernels, _pycore; print(kernels.BACKEND, kernels.simulate is _pycore.simulate)"
    env = dict(os.environ, EDGEHARVEST_PURE="1")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True).stdout
    assert out.split() == ["python", "True"]
