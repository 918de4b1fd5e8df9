"""Slotted simulation of a layered inference network of harvesting devices.

One replication is a deterministic function of its pre-drawn random
streams, so the compiled and pure-Python kernels give bit-identical
results and replications can run in any order or process.
"""
from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from . import kernels
from .energy import DeviceProfile, mode_table, uniform_arrival_mdf
from .planner import RiskCache, ScheduleWeights, find_q_lim

log = logging.getLogger(__name__)

POLICIES = ("uniform", "long_term", "adaptive")
DROP = -1


@dataclass(frozen=True)
class Topology:
    layers: tuple[tuple[DeviceProfile, ...], ...]

    def __post_init__(self):
        layers = tuple(tuple(layer) for layer in self.layers)
        if not layers:
            raise ValueError("topology needs at least one layer")
        for i, layer in enumerate(layers):
            if not layer:
                raise ValueError(f"layer {i} has no devices")
        object.__setattr__(self, "layers", layers)

    @property
    def devices(self) -> list[DeviceProfile]:
        return [d for layer in self.layers for d in layer]

    @property
    def layer_start(self) -> np.ndarray:
        return np.cumsum([0] + [len(layer) for layer in self.layers]).astype(np.int64)

    @classmethod
    def from_means(cls, base: DeviceProfile, means_joules: Sequence[Sequence[float]], spread: float = 0.5) -> "Topology":
        """One device per mean, uniform arrivals on ``mean * (1 +- spread)``."""
        layers = []
        for row in means_joules:
            layers.append(
                tuple(
                    base.with_arrival(uniform_arrival_mdf(m * (1 - spread), m * (1 + spread), base.unit_joules))
                    for m in row
                )
            )
        return cls(tuple(layers))


@dataclass(frozen=True)
class SimConfig:
    topology: Topology
    p: float
    horizon: int
    policy: str = "uniform"
    mode_policy: object = "dynamic"
    replications: int = 1
    seed: int = 0
    delta_seconds: float = 100.0
    alpha: float | None = None
    initial_energy: float = 1.0
    xi_lim: float = 0.01
    q_lims: tuple | None = None
    accounting: str = "stage"
    record_states: bool = False
    workers: int = 1

    def __post_init__(self):
        if self.accounting not in ("stage", "slot"):
            raise ValueError(f"accounting must be 'stage' or 'slot', got {self.accounting!r}")
        if not 0.0 <= self.p <= 1.0:
            raise ValueError(f"p must lie in [0, 1], got {self.p}")
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if self.replications < 1:
            raise ValueError("replications must be >= 1")
        if self.policy not in POLICIES:
            raise ValueError(f"policy must be one of {POLICIES}, got {self.policy!r}")
        if not 0.0 <= self.initial_energy <= 1.0:
            raise ValueError("initial_energy is a battery fraction in [0, 1]")
        if self.alpha is not None:
            for layer in self.topology.layers:
                if not 0.0 <= self.alpha <= len(layer):
                    raise ValueError(f"alpha must lie in [0, N_layer], got {self.alpha}")
        if self.q_lims is not None and len(self.q_lims) != len(self.topology.devices):
            raise ValueError("q_lims must give one rate per device")


@dataclass
class SimMetrics:
    arrived: np.ndarray
    completed: np.ndarray
    dropped: np.ndarray
    inflight: np.ndarray
    downtime_fraction: np.ndarray
    mean_battery_fraction: np.ndarray
    low_energy_fraction: np.ndarray
    device_downtime: np.ndarray
    battery_trace: np.ndarray
    state_counts: np.ndarray | None = None
    weights: tuple = field(default_factory=tuple)

    @property
    def throughput(self) -> np.ndarray:
        """Completed over arrived jobs, per replication (1 when nothing arrived)."""
        arr = self.arrived.astype(float)
        return np.divide(self.completed, arr, out=np.ones_like(arr), where=arr > 0)

    @property
    def drop_fraction(self) -> np.ndarray:
        arr = self.arrived.astype(float)
        return np.divide(self.dropped, arr, out=np.zeros_like(arr), where=arr > 0)

    def conserved(self) -> bool:
        return bool(np.all(self.arrived == self.completed + self.dropped + self.inflight))

    SUMMARY = (
        "completed",
        "dropped",
        "arrived",
        "throughput",
        "drop_fraction",
        "downtime_fraction",
        "mean_battery_fraction",
    )

    def summary(self) -> dict:
        out = {}
        for name in self.SUMMARY:
            v = np.asarray(getattr(self, name), dtype=float)
            out[f"{name}_mean"] = float(v.mean())
            out[f"{name}_std"] = float(v.std(ddof=1)) if v.size > 1 else 0.0
        return out


def _device_arrays(config: SimConfig):
    devs = config.topology.devices
    width = max(d.e_max for d in devs) + 1
    n_modes = max(m.id for d in devs for m in d.modes) + 1
    mode_at = np.zeros((len(devs), width), dtype=np.int64)
    kappa_of = np.ones((len(devs), n_modes), dtype=np.int64)
    ce_of = np.zeros((len(devs), n_modes), dtype=np.int64)
    for i, d in enumerate(devs):
        mode_at[i, : d.e_max + 1] = mode_table(d, config.mode_policy)
        for m in d.modes:
            kappa_of[i, m.id] = m.kappa
            ce_of[i, m.id] = m.ce_units
    as64 = lambda xs: np.array(xs, dtype=np.int64)  # noqa: E731
    return dict(
        layer_start=config.topology.layer_start,
        e_max=as64([d.e_max for d in devs]),
        e_th=as64([d.e_th for d in devs]),
        e_thp=as64([d.e_th_prime for d in devs]),
        e_lim=as64([d.e_th for d in devs]),
        mode_at=mode_at,
        kappa_of=kappa_of,
        ce_of=ce_of,
        crit_mode=as64([d.base_mode for d in devs]),
        init_e=as64([int(round(config.initial_energy * d.e_max)) for d in devs]),
    )


def device_q_lims(config: SimConfig, cache: RiskCache | None = None) -> tuple[float, ...]:
    if config.q_lims is not None:
        return tuple(float(x) for x in config.q_lims)
    out = []
    for d in config.topology.devices:
        out.append(find_q_lim(d, config.mode_policy, config.xi_lim, d.e_th, cache=cache).q_lim)
    return tuple(out)


def layer_weights(config: SimConfig, q_lims: Sequence[float]) -> np.ndarray:
    """Long-term weights normalised within each layer."""
    w = np.asarray(q_lims, dtype=float).copy()
    ls = config.topology.layer_start
    for ell in range(len(ls) - 1):
        block = w[ls[ell] : ls[ell + 1]]
        if not block.sum() > 0:
            raise ValueError(f"layer {ell}: every device has a zero rate limit")
        w[ls[ell] : ls[ell + 1]] = block / block.sum()
    return w


def replication_streams(config: SimConfig, rep: int):
    """Random inputs for one replication, from ``(seed, rep, stream)`` keyed seeds."""
    T = config.horizon
    devs = config.topology.devices

    def gen(stream):
        return np.random.Generator(np.random.PCG64(np.random.SeedSequence(config.seed, spawn_key=(rep, stream))))

    arrival_u = gen(0).random(T)
    dispatch_u = gen(1).random((T, len(devs) + 1))
    harvest = np.empty((T, len(devs)), dtype=np.int64)
    for i, d in enumerate(devs):
        harvest[:, i] = np.searchsorted(d.arrival.cdf(), gen(2 + i).random(T), side="right")
    return harvest, arrival_u, dispatch_u


def _run_reps(config: SimConfig, arrays: dict, lt_w: np.ndarray, reps: Sequence[int]):
    D = len(config.topology.devices)
    width = arrays["mode_at"].shape[1]
    code = kernels.POLICY_CODES[config.policy]
    alpha = -1.0 if config.alpha is None else float(config.alpha)
    counts = np.zeros((D, width, 4) if config.record_states else (0, 1, 4), dtype=np.int64)
    rows = []
    for r in reps:
        harvest, arrival_u, dispatch_u = replication_streams(config, r)
        dev_out = np.zeros((D, 3))
        tr = np.zeros(config.horizon)
        res = kernels.simulate(
            harvest,
            arrival_u,
            dispatch_u,
            arrays["layer_start"],
            arrays["e_max"],
            arrays["e_th"],
            arrays["e_thp"],
            arrays["e_lim"],
            arrays["mode_at"],
            arrays["kappa_of"],
            arrays["ce_of"],
            arrays["crit_mode"],
            lt_w,
            code,
            alpha,
            float(config.p),
            1 if config.accounting == "stage" else 0,
            arrays["init_e"],
            counts,
            dev_out,
            tr,
        )
        rows.append((res, dev_out / config.horizon, tr))
    return rows, counts


def _worker(args):
    config, arrays, lt_w, reps = args
    return _run_reps(config, arrays, lt_w, reps)


def run(config: SimConfig, cache: RiskCache | None = None) -> SimMetrics:
    """Run every replication and collect per-replication metrics."""
    arrays = _device_arrays(config)
    if config.policy == "uniform":
        lt_w = np.ones(len(config.topology.devices))
    else:
        lt_w = layer_weights(config, device_q_lims(config, cache))
    reps = list(range(config.replications))
    if config.workers > 1 and len(reps) > 1:
        chunks = [reps[i :: config.workers] for i in range(config.workers)]
        with ProcessPoolExecutor(config.workers) as pool:
            parts = list(pool.map(_worker, [(config, arrays, lt_w, c) for c in chunks]))
        by_rep = {}
        counts = None
        for chunk, (rows, cn) in zip(chunks, parts):
            by_rep.update(zip(chunk, rows))
            counts = cn if counts is None else counts + cn
        rows = [by_rep[r] for r in reps]
    else:
        rows, counts = _run_reps(config, arrays, lt_w, reps)
    # summed in replication order so the worker count cannot change the result
    trace = np.zeros(config.horizon)
    for r in rows:
        trace += r[2]

    res = np.array([r[0] for r in rows], dtype=np.int64).reshape(-1, 4)
    dev = np.stack([r[1] for r in rows])  # reps x devices x (downtime, low, battery)
    return SimMetrics(
        arrived=res[:, 0],
        completed=res[:, 1],
        dropped=res[:, 2],
        inflight=res[:, 3],
        downtime_fraction=dev[:, :, 0].mean(axis=1),
        mean_battery_fraction=dev[:, :, 2].mean(axis=1),
        low_energy_fraction=dev[:, :, 1].mean(axis=1),
        device_downtime=dev[:, :, 0],
        battery_trace=trace / len(reps),
        state_counts=counts if config.record_states else None,
        weights=tuple(lt_w.tolist()),
    )


def dispatch(weights: ScheduleWeights, eligible, rng: np.random.Generator):
    """Pick a device among ``eligible`` ones, proportionally to ``weights``; ``DROP`` if none."""
    w = weights.as_dict()
    cands = [d for d in weights.devices if d in set(eligible)]
    if not cands:
        return DROP
    mass = np.array([w[d] for d in cands], dtype=float)
    if not mass.sum() > 0:
        mass = np.ones(len(cands))
    return cands[int(rng.choice(len(cands), p=mass / mass.sum()))]


def sweep(
    template: SimConfig,
    axis: str,
    grid: Sequence[float],
    policies: Sequence[str] = POLICIES,
    base_profile: DeviceProfile | None = None,
    multipliers: Sequence[Sequence[float]] | None = None,
    spread: float = 0.5,
    cache: RiskCache | None = None,
) -> list[dict]:
    """Run each policy at each grid point. Returns one row dict per (point, policy).

    ``axis="p"`` varies the job arrival probability; ``axis="energy"``
    rebuilds the topology with device means ``value * multiplier`` (J/slot).
    """
    if not grid:
        raise ValueError("empty sweep grid")
    if axis not in ("p", "energy"):
        raise ValueError(f"unknown sweep axis {axis!r}")
    cache = RiskCache() if cache is None else cache
    rows = []
    for value in grid:
        if axis == "p":
            cfg = replace(template, p=float(value))
        else:
            if base_profile is None or multipliers is None:
                raise ValueError("energy sweeps need base_profile and multipliers")
            means = [[value * m for m in row] for row in multipliers]
            cfg = replace(template, topology=Topology.from_means(base_profile, means, spread))
        for pol in policies:
            log.info("sweep %s=%g policy=%s", axis, value, pol)
            m = run(replace(cfg, policy=pol), cache=cache)
            rows.append({"axis": axis, "value": float(value), "policy": pol, **m.summary()})
    return rows
