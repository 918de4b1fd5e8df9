"""Acceptance suite: one test per criterion, each printing a single PASS/FAIL line."""
import csv
import io
import math
from dataclasses import replace

import numpy as np
import pytest

from edgeharvest.chain import build_chain, downtime_risk, stationary_distribution
from edgeharvest.cli import main
from edgeharvest.energy import EnergyMdf, convolve_mdf, parse_mode_policy, uniform_arrival_mdf
from edgeharvest.planner import RiskCache, adaptive_weights, brent_root, risk_curve
from edgeharvest.sim import POLICIES, SimConfig, Topology, run

STRATEGIES = ("15w", "30w", "60w", "dynamic")
RUNS = []  # every SimMetrics produced by a criterion run, for criterion 6


def report(capsys, n, title, ok, detail=""):
    with capsys.disabled():
        print(f"\ncriterion {n} {title}: {'PASS' if ok else 'FAIL'}{' (' + detail + ')' if detail else ''}")
    assert ok, detail


def cli_csv(capsys, argv):
    code = main([argv[0], "-q", *argv[1:]])
    text = capsys.readouterr().out
    assert code == 0
    return text, list(csv.DictReader(io.StringIO(text.split("\n", 1)[1])))


@pytest.fixture(scope="module")
def cache():
    return RiskCache()


@pytest.fixture(scope="module")
def curves(default_config, analysis_profile, cache):
    grid = default_config.analysis.q_grid
    e_lim = default_config.e_lim()
    return grid, {
        s: risk_curve(analysis_profile, parse_mode_policy(analysis_profile, s), grid, e_lim, cache) for s in STRATEGIES
    }


def test_criterion_1_time_bound_qlim(capsys):
    _, rows = cli_csv(capsys, ["qlim"])
    got = {r["policy"]: r for r in rows}
    err15 = abs(float(got["15w"]["q_lim"]) - 1 / 3)
    err30 = abs(float(got["30w"]["q_lim"]) - 1 / 2)
    ok = err15 <= 1e-9 and err30 <= 1e-9 and got["15w"]["binding"] == got["30w"]["binding"] == "time"
    report(capsys, 1, "time-bound q_lim exactness", ok, f"15 W err {err15:.1e}, 30 W err {err30:.1e}")


def test_criterion_2_risk_curve_shape(capsys, curves):
    grid, xi = curves
    assert list(grid) == [0.05, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9]
    monotone = all(np.all(np.diff(xi[s]) >= 0) for s in STRATEGIES)
    ordered = all(a <= b <= c for a, b, c in zip(xi["15w"], xi["30w"], xi["60w"]))
    report(capsys, 2, "risk-curve shape", monotone and ordered, f"monotone={monotone} ordered={ordered}")


def test_criterion_3_analytic_vs_simulation(capsys, analysis_profile):
    prof = analysis_profile
    top = Topology(((prof,),))
    worst_tv, fails = 0.0, []
    for name in STRATEGIES:
        mode = parse_mode_policy(prof, name)
        for q in (0.2, 0.5):
            chain = build_chain(prof, q, mode)
            dist = stationary_distribution(chain)
            xi = downtime_risk(dist, chain, prof.e_th)
            m = run(SimConfig(top, q, 10**6, mode_policy=mode, seed=0, record_states=True))
            RUNS.append(m)
            sim = float(m.low_energy_fraction[0])
            counts = m.state_counts[0].reshape(-1).astype(float)
            tv = 0.5 * np.abs(counts / counts.sum() - dist.full(chain.n_states)).sum()
            worst_tv = max(worst_tv, tv)
            if abs(sim - xi) > max(0.2 * xi, 5e-3) or tv > 2e-2:
                fails.append(f"{name}@{q}: xi={xi:.3g} sim={sim:.3g} tv={tv:.4f}")
    report(capsys, 3, "analytic-simulation agreement", not fails, "; ".join(fails) or f"max TV {worst_tv:.4f}")


def test_criterion_4_power_mode_orderings(capsys, default_config):
    pm = default_config.powermodes
    prof = default_config.profile(pm.arrival)
    top = Topology(((prof,),))
    J, B = {}, {}
    for name in STRATEGIES:
        m = run(
            SimConfig(
                top,
                pm.p,
                pm.horizon,
                mode_policy=parse_mode_policy(prof, name),
                replications=pm.reps,
                seed=default_config.seed,
                initial_energy=pm.initial_energy,
            )
        )
        RUNS.append(m)
        J[name], B[name] = m.completed.mean(), m.mean_battery_fraction.mean()
    checks = [
        J["15w"] < J["dynamic"] < J["60w"],
        J["30w"] < J["60w"],
        B["60w"] < B["30w"] < B["dynamic"] < B["15w"],
        B["dynamic"] - B["30w"] >= 0.10,
    ]
    detail = " ".join(f"{n}:{J[n]:.1f} jobs/{100 * B[n]:.1f}%" for n in STRATEGIES)
    report(capsys, 4, "power-mode orderings", all(checks), detail)


def test_criterion_5_scheduling_dominance(capsys, default_config):
    (sw,) = [s for s in default_config.sweeps if s.axis == "energy"]
    cache = RiskCache()
    template = default_config.sim_config(p=0.3 if sw.p is None else sw.p, replications=1000, seed=0)
    assert template.p == 0.3 and template.mode_policy == "dynamic"
    down, thr = {}, {}
    for value in sw.grid:
        cfg = replace(template, topology=default_config.topology(value))
        for pol in POLICIES:
            m = run(replace(cfg, policy=pol), cache=cache)
            RUNS.append(m)
            down[value, pol] = m.downtime_fraction.mean()
            thr[value, pol] = m.throughput.mean()
    fails = []
    for v in sw.grid:
        if not down[v, "long_term"] < down[v, "uniform"]:
            fails.append(f"lt downtime at {v}")
        if not down[v, "adaptive"] <= down[v, "long_term"]:
            fails.append(f"adaptive downtime at {v}")
        if not thr[v, "long_term"] >= thr[v, "uniform"]:
            fails.append(f"throughput at {v}")
    lo = min(sw.grid)
    gap = thr[lo, "long_term"] - thr[lo, "uniform"]
    if gap < 0.05:
        fails.append(f"throughput gap {gap:.3f} < 0.05")
    detail = f"gap at {lo:g} J/slot {gap:.3f}; downtime u/lt/ad " + ", ".join(
        f"{down[v, 'uniform']:.3f}/{down[v, 'long_term']:.3f}/{down[v, 'adaptive']:.3f}" for v in sw.grid
    )
    report(capsys, 5, "scheduling dominance", not fails, "; ".join(fails) or detail)


COMMANDS = [
    ["analyze"],
    ["qlim", "--curve"],
    ["powermodes", "--reps", "50"],
    ["simulate", "--reps", "20", "--policy", "adaptive"],
    ["sweep", "--sweep", "energy", "--reps", "5"],
]


def test_criterion_6_conservation_and_determinism(capsys):
    assert len(RUNS) >= 8 + 4, "criteria 3 to 5 must run first"
    conserved = all(m.conserved() for m in RUNS)
    identical = True
    for argv in COMMANDS:
        a, _ = cli_csv(capsys, argv + ["--seed", "11"])
        b, _ = cli_csv(capsys, argv + ["--seed", "11"])
        identical &= a == b
    reps = sum(m.arrived.size for m in RUNS)
    report(capsys, 6, "conservation and determinism", conserved and identical, f"{reps} replications, {len(COMMANDS)} commands")


def test_criterion_7_numerical_kernels(capsys, default_config, analysis_profile, testbed_profile):
    worst_res, worst_row = 0.0, 0.0
    for prof in (analysis_profile, testbed_profile):
        for name in STRATEGIES:
            for q in default_config.analysis.q_grid:
                chain = build_chain(prof, q, parse_mode_policy(prof, name))
                worst_row = max(worst_row, float(np.abs(np.asarray(chain.P.sum(axis=1)).ravel() - 1).max()))
                worst_res = max(worst_res, stationary_distribution(chain).residual)
    worst_mom = 0.0
    for f in (uniform_arrival_mdf(4750, 14250, 100), uniform_arrival_mdf(0, 19000, 100), EnergyMdf(np.array([0.2, 0.5, 0.3]))):
        for k in (1, 2, 3):
            g = convolve_mdf(f, k)
            worst_mom = max(worst_mom, abs(g.mean() - k * f.mean()), abs(g.var() - k * f.var()))
    root_err = abs(brent_root(lambda x: x * x - 2, 1, 2, tol=1e-10) - math.sqrt(2))
    ok = worst_res <= 1e-10 and worst_row <= 1e-10 and worst_mom <= 1e-9 and root_err <= 1e-10
    detail = f"residual {worst_res:.1e}, row sum {worst_row:.1e}, moments {worst_mom:.1e}, sqrt2 {root_err:.1e}"
    report(capsys, 7, "numerical kernel checks", ok, detail)


def test_criterion_8_adaptive_oracle(capsys):
    w = adaptive_weights([0.4, 0.4, 0.4], [1, 2, 3], alpha=1).weights
    err = float(np.max(np.abs(np.array(w) - [1 / 7, 3 / 7, 3 / 7])))
    report(capsys, 8, "adaptive algebra oracle", err <= 1e-12, f"max err {err:.1e}")
