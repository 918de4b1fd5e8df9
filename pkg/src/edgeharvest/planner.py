"""Per-device rate limits and per-layer scheduling weights."""
from __future__ import annotations

import math
import threading
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .chain import (
    UndefinedMetricError,
    build_chain,
    downtime_risk,
    expected_kappa,
    stationary_distribution,
)
from .energy import DeviceProfile


class BracketError(ValueError):
    pass


class DegenerateWeightsError(ValueError):
    pass


def brent_root(f: Callable[[float], float], lo: float, hi: float, tol: float = 1e-10, maxiter: int = 200) -> float:
    """Root of ``f`` on ``[lo, hi]`` by Brent's method (bisection, secant, inverse quadratic)."""
    a, b = float(lo), float(hi)
    fa, fb = f(a), f(b)
    if fa == 0.0:
        return a
    if fb == 0.0:
        return b
    if (fa > 0) == (fb > 0):
        raise BracketError(f"f({a})={fa} and f({b})={fb} do not bracket a root")
    c, fc = a, fa
    d = e = b - a
    eps = np.finfo(float).eps
    for _ in range(maxiter):
        if (fb > 0) == (fc > 0):
            c, fc = a, fa
            d = e = b - a
        if abs(fc) < abs(fb):
            a, b, c = b, c, b
            fa, fb, fc = fb, fc, fb
        tol1 = 2.0 * eps * abs(b) + 0.5 * tol
        xm = 0.5 * (c - b)
        if abs(xm) <= tol1 or fb == 0.0:
            return b
        if abs(e) >= tol1 and abs(fa) > abs(fb):
            s = fb / fa
            if a == c:
                p = 2.0 * xm * s
                q = 1.0 - s
            else:
                q = fa / fc
                r = fb / fc
                p = s * (2.0 * xm * q * (q - r) - (b - a) * (r - 1.0))
                q = (q - 1.0) * (r - 1.0) * (s - 1.0)
            if p > 0:
                q = -q
            p = abs(p)
            if 2.0 * p < min(3.0 * xm * q - abs(tol1 * q), abs(e * q)):
                e, d = d, p / q
            else:
                d = e = xm
        else:
            d = e = xm
        a, fa = b, fb
        b += d if abs(d) > tol1 else math.copysign(tol1, xm)
        fb = f(b)
    raise RuntimeError(f"brent_root did not converge in {maxiter} iterations")


@dataclass(frozen=True)
class RatePlan:
    q_lim_energy: float
    kappa_bar: float
    q_lim: float
    binding: str  # "energy" | "time" | "infeasible"

    @property
    def feasible(self) -> bool:
        return self.binding != "infeasible"


class RiskCache:
    """Solved-chain metrics keyed by (profile, policy, q rounded to 1e-6)."""

    def __init__(self):
        self._data: dict = {}
        self._lock = threading.Lock()

    def metrics(self, profile: DeviceProfile, policy, q: float, e_lim: int) -> tuple[float, float | None]:
        key = (profile.key(), str(policy), round(q, 6), e_lim)
        hit = self._data.get(key)
        if hit is not None:
            return hit
        chain = build_chain(profile, round(q, 6), policy)
        dist = stationary_distribution(chain)
        xi = downtime_risk(dist, chain, e_lim)
        try:
            kb = expected_kappa(dist, chain)
        except UndefinedMetricError:
            kb = None
        with self._lock:
            self._data.setdefault(key, (xi, kb))
        return xi, kb

    def __len__(self):
        return len(self._data)


_default_cache = RiskCache()

Q_MIN = 1e-4


def risk_curve(profile: DeviceProfile, policy, qs: Sequence[float], e_lim: int | None = None, cache: RiskCache | None = None):
    cache = _default_cache if cache is None else cache
    e_lim = profile.e_th if e_lim is None else e_lim
    return [cache.metrics(profile, policy, q, e_lim)[0] for q in qs]


def find_q_lim(
    profile: DeviceProfile,
    policy="dynamic",
    xi_lim: float = 0.01,
    e_lim: int | None = None,
    tol: float = 1e-8,
    cache: RiskCache | None = None,
) -> RatePlan:
    """Largest input rate keeping the downtime risk at ``xi_lim``, capped by ``1/kappa_bar``."""
    if not 0.0 < xi_lim < 1.0:
        raise ValueError(f"xi_lim must lie in (0, 1), got {xi_lim}")
    cache = _default_cache if cache is None else cache
    e_lim = profile.e_th if e_lim is None else e_lim

    def excess(q):
        return cache.metrics(profile, policy, q, e_lim)[0] - xi_lim

    if excess(Q_MIN) > 0:
        return RatePlan(0.0, math.nan, 0.0, "infeasible")
    if excess(1.0) <= 0:
        q_energy = 1.0
    else:
        q_energy = brent_root(excess, Q_MIN, 1.0, tol=tol)
    _, kappa_bar = cache.metrics(profile, policy, q_energy, e_lim)
    if kappa_bar is None:
        raise UndefinedMetricError(f"expected processing time undefined at q={q_energy}")
    q_time = 1.0 / kappa_bar
    if q_energy < q_time:
        return RatePlan(q_energy, kappa_bar, q_energy, "energy")
    return RatePlan(q_energy, kappa_bar, q_time, "time")


@dataclass(frozen=True)
class ScheduleWeights:
    """Dispatch probabilities over a layer's devices; ``devices`` empty means none available."""

    devices: tuple
    weights: tuple
    layer: int | None = None

    @property
    def available(self) -> bool:
        return bool(self.devices)

    def as_dict(self) -> dict:
        return dict(zip(self.devices, self.weights))


NO_DEVICE = ScheduleWeights((), ())


def uniform_weights(available, layer: int | None = None) -> ScheduleWeights:
    devs = tuple(available)
    if not devs:
        return ScheduleWeights((), (), layer)
    return ScheduleWeights(devs, tuple(1.0 / len(devs) for _ in devs), layer)


def long_term_weights(q_lims: Sequence[float], devices: Sequence | None = None, layer: int | None = None) -> ScheduleWeights:
    x = np.asarray(q_lims, dtype=float)
    if np.any(x < 0) or not x.sum() > 0:
        raise DegenerateWeightsError(f"rate limits {list(q_lims)} cannot be normalised")
    devs = tuple(devices) if devices is not None else tuple(range(x.size))
    return ScheduleWeights(devs, tuple((x / x.sum()).tolist()), layer)


def adaptive_weights(
    q_lims: Sequence[float],
    modes: Sequence[int],
    alpha: float | None = None,
    critical_mode: int = 1,
    devices: Sequence | None = None,
    layer: int | None = None,
) -> ScheduleWeights:
    """Long-term weights with mass moved off devices in the critical (lowest) power mode.

    ``alpha`` defaults to the number of devices currently in that mode.
    """
    if len(modes) != len(q_lims):
        raise ValueError("modes and q_lims must align")
    base = long_term_weights(q_lims, devices, layer)
    n = len(q_lims)
    if alpha is None:
        alpha = sum(1 for m in modes if m == critical_mode)
    if not 0.0 <= alpha <= n:
        raise ValueError(f"alpha must lie in [0, {n}], got {alpha}")
    x = np.array(base.weights)
    z = alpha / n
    for i, m in enumerate(modes):
        if m == critical_mode:
            # x - (1 - z) x, written as z x to avoid cancellation for small z
            x[i] = z * x[i]
        total = x.sum()
        if not total > 0:
            # every device critical with alpha = 0
            return base
        x = x / total
    return ScheduleWeights(base.devices, tuple(x.tolist()), layer)
