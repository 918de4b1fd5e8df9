"""Compiled vs pure-Python kernels: network simulation and GTH stationary solve.

Run with ``python benchmarks/bench_kernels.py``. Both backends are called
directly, so no environment variable is needed.
"""
import argparse
import time
from dataclasses import replace

import numpy as np

from edgeharvest import _pycore, kernels, sim
from edgeharvest.chain import build_chain
from edgeharvest.config import default_config_path, load_config


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t)
    return min(times)


def bench_simulate(cfg, repeat):
    sim_cfg = cfg.sim_config(policy="adaptive", replications=100, p=0.5)
    # rate limits solved once up front so only the kernel is timed
    sim_cfg = replace(sim_cfg, q_lims=sim.device_q_lims(sim_cfg))
    out = {}
    compiled = kernels.simulate
    for name, fn in (("compiled", compiled), ("python", _pycore.simulate)):
        kernels.simulate = fn
        try:
            out[name] = best_of(lambda: sim.run(sim_cfg), repeat)
        finally:
            kernels.simulate = compiled
    return out


def bench_gth(cfg, repeat):
    P = build_chain(cfg.profile(), 0.3, "dynamic").P.toarray()
    out = {}
    for name, fn in (("compiled", kernels.gth_stationary), ("python", _pycore.gth_stationary)):
        out[name] = best_of(lambda: fn(np.ascontiguousarray(P.copy())), repeat)
    return out, P.shape[0]


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()
    if kernels.BACKEND != "compiled":
        raise SystemExit("compiled extension not available; build it with `pip install --no-build-isolation -e .`")
    cfg = load_config(default_config_path())
    s = bench_simulate(cfg, args.repeat)
    g, n = bench_gth(cfg, args.repeat)
    print(f"{'kernel':<40}{'compiled s':>12}{'python s':>12}{'speedup':>10}")
    for label, t in (("simulate (9 devices, 100 x 100 slots)", s), (f"gth_stationary ({n} states)", g)):
        print(f"{label:<40}{t['compiled']:>12.4f}{t['python']:>12.4f}{t['python'] / t['compiled']:>9.1f}x")


if __name__ == "__main__":
    main()
