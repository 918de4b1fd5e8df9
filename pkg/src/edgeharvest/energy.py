"""Discrete energy arithmetic for a harvesting edge device.

All quantities are integer multiples of an energy unit (100 J by default).
Physical values are rounded once, when a profile is built, and everything
downstream works on integers.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np


class EnergyModelError(ValueError):
    """Invalid energy quantity or device profile."""


def quantize_energy(joules: float, unit_joules: float) -> int:
    """Return ``joules`` as a whole number of units (round half to even)."""
    if joules < 0:
        raise EnergyModelError(f"negative energy: {joules}")
    if unit_joules <= 0:
        raise EnergyModelError(f"unit_joules must be positive, got {unit_joules}")
    # builtin round() is banker's rounding
    return int(round(joules / unit_joules))


@dataclass(frozen=True, eq=False)
class EnergyMdf:
    """Probability mass over energy units 0..K arriving in one slot (or stage)."""

    probs: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=float)
        if p.ndim != 1 or p.size == 0:
            raise EnergyModelError("an MDF needs a non-empty 1-d probability vector")
        if np.any(p < 0):
            raise EnergyModelError("MDF entries must be non-negative")
        if abs(p.sum() - 1.0) > 1e-12:
            raise EnergyModelError(f"MDF sums to {p.sum()!r}, not 1")
        p = p.copy()
        p.setflags(write=False)
        object.__setattr__(self, "probs", p)

    @classmethod
    def point(cls, units: int) -> "EnergyMdf":
        p = np.zeros(units + 1)
        p[units] = 1.0
        return cls(p)

    @property
    def support_max(self) -> int:
        return self.probs.size - 1

    def mean(self) -> float:
        return float(np.dot(np.arange(self.probs.size), self.probs))

    def var(self) -> float:
        k = np.arange(self.probs.size)
        m = self.mean()
        return float(np.dot((k - m) ** 2, self.probs))

    def cdf(self) -> np.ndarray:
        c = np.cumsum(self.probs)
        c[-1] = 1.0
        return c

    def key(self) -> tuple:
        return tuple(self.probs.tolist())

    def __eq__(self, other):
        if not isinstance(other, EnergyMdf):
            return NotImplemented
        return self.probs.shape == other.probs.shape and bool(np.all(self.probs == other.probs))

    def __hash__(self):
        return hash(self.key())


def uniform_arrival_mdf(lo_joules: float, hi_joules: float, unit_joules: float) -> EnergyMdf:
    """Discrete uniform arrivals between two physical bounds."""
    if lo_joules < 0 or hi_joules < lo_joules:
        raise EnergyModelError(f"bad arrival bounds [{lo_joules}, {hi_joules}]")
    lo = quantize_energy(lo_joules, unit_joules)
    hi = quantize_energy(hi_joules, unit_joules)
    p = np.zeros(hi + 1)
    p[lo:] = 1.0 / (hi - lo + 1)
    return EnergyMdf(p / p.sum())


def convolve_mdf(f: EnergyMdf, kappa: int) -> EnergyMdf:
    """kappa-fold self convolution: the inflow over a stage of kappa slots."""
    if kappa < 1:
        raise EnergyModelError(f"kappa must be >= 1, got {kappa}")
    out = f.probs
    for _ in range(kappa - 1):
        out = np.convolve(out, f.probs)
    out = np.clip(out, 0.0, None)
    return EnergyMdf(out / out.sum())


def energy_update(e: int, delta_ie: int, ce: int, e_max: int) -> int:
    """Battery level after one stage: harvest in, computation out, clamp."""
    return max(min(e + delta_ie - ce, e_max), 0)


def stage_arrival_prob(p: float, kappa: int) -> float:
    """Probability that at least one job arrives in ``kappa`` slots."""
    return 1.0 - (1.0 - p) ** kappa


@dataclass(frozen=True)
class PowerModeSpec:
    id: int
    watts_label: str
    kappa: int
    ce_units: int

    def __post_init__(self):
        if self.id < 1:
            raise EnergyModelError(f"mode id must be >= 1 (0 is power saving), got {self.id}")
        if self.kappa < 1:
            raise EnergyModelError(f"mode {self.id}: kappa must be >= 1")
        if self.ce_units < 0:
            raise EnergyModelError(f"mode {self.id}: ce_units must be >= 0")

    @property
    def slug(self) -> str:
        """``"15 W"`` -> ``"15w"``; used on the command line."""
        return self.watts_label.replace(" ", "").lower()


@dataclass(frozen=True)
class DeviceProfile:
    modes: tuple[PowerModeSpec, ...]
    e_max: int
    e_th: int
    e_th_prime: int
    pm_lookup: tuple[tuple[float, int], ...]
    arrival: EnergyMdf
    unit_joules: float = 100.0
    base_mode: int | None = None
    _mode_index: dict = field(init=False, repr=False, compare=False, hash=False)

    def __post_init__(self):
        object.__setattr__(self, "modes", tuple(self.modes))
        object.__setattr__(self, "pm_lookup", tuple((float(t), int(m)) for t, m in self.pm_lookup))
        ids = [m.id for m in self.modes]
        if not ids:
            raise EnergyModelError("profile has no power modes")
        if len(set(ids)) != len(ids):
            raise EnergyModelError("duplicate mode ids")
        object.__setattr__(self, "_mode_index", {m.id: m for m in self.modes})
        if self.base_mode is None:
            object.__setattr__(self, "base_mode", min(ids))
        if self.base_mode not in self._mode_index:
            raise EnergyModelError(f"base_mode {self.base_mode} is not a defined mode")
        if not 0 <= self.e_th < self.e_th_prime <= self.e_max:
            raise EnergyModelError(
                f"need 0 <= e_th < e_th_prime <= e_max, got {self.e_th}, {self.e_th_prime}, {self.e_max}"
            )
        thresholds = [t for t, _ in self.pm_lookup]
        if any(not 0.0 <= t <= 1.0 for t in thresholds):
            raise EnergyModelError("pm_lookup thresholds must lie in [0, 1]")
        if any(b <= a for a, b in zip(thresholds, thresholds[1:])):
            raise EnergyModelError("pm_lookup thresholds must be strictly increasing")
        for _, mid in self.pm_lookup:
            if mid not in self._mode_index:
                raise EnergyModelError(f"pm_lookup references unknown mode {mid}")
        for m in self.modes:
            if m.ce_units > self.e_max:
                raise EnergyModelError(f"mode {m.id} consumes more than the battery holds")
        if self.unit_joules <= 0:
            raise EnergyModelError("unit_joules must be positive")

    def mode(self, mode_id: int) -> PowerModeSpec:
        try:
            return self._mode_index[mode_id]
        except KeyError:
            raise EnergyModelError(f"unknown mode id {mode_id}") from None

    def mode_by_slug(self, slug: str) -> PowerModeSpec:
        for m in self.modes:
            if m.slug == slug.lower():
                return m
        raise EnergyModelError(f"no power mode labelled {slug!r}")

    def with_arrival(self, arrival: EnergyMdf) -> "DeviceProfile":
        return DeviceProfile(
            modes=self.modes,
            e_max=self.e_max,
            e_th=self.e_th,
            e_th_prime=self.e_th_prime,
            pm_lookup=self.pm_lookup,
            arrival=arrival,
            unit_joules=self.unit_joules,
            base_mode=self.base_mode,
        )

    def key(self) -> tuple:
        """Hashable identity used by result caches."""
        return (
            tuple((m.id, m.kappa, m.ce_units) for m in self.modes),
            self.e_max,
            self.e_th,
            self.e_th_prime,
            self.pm_lookup,
            self.base_mode,
            self.arrival.key(),
        )


def power_mode_lookup(e: int, profile: DeviceProfile) -> int:
    """Mode id selected at battery level ``e`` by the profile's lookup table."""
    if not profile.pm_lookup:
        raise EnergyModelError("empty power-mode lookup table")
    frac = e / profile.e_max
    chosen = profile.base_mode
    for threshold, mode_id in profile.pm_lookup:
        if frac >= threshold:
            chosen = mode_id
        else:
            break
    return chosen


def mode_table(profile: DeviceProfile, policy) -> np.ndarray:
    """Mode id for every battery level 0..e_max.

    ``policy`` is either a fixed mode id or the string ``"dynamic"``.
    """
    if policy == "dynamic":
        return np.array([power_mode_lookup(e, profile) for e in range(profile.e_max + 1)], dtype=np.int64)
    mode_id = profile.mode(int(policy)).id
    return np.full(profile.e_max + 1, mode_id, dtype=np.int64)


def policy_label(profile: DeviceProfile, policy) -> str:
    if policy == "dynamic":
        return "dynamic"
    return profile.mode(int(policy)).slug


def parse_mode_policy(profile: DeviceProfile, text) -> "int | str":
    """Accept ``"dynamic"``, a watts slug like ``"30w"``, or a mode id."""
    if isinstance(text, int):
        return profile.mode(text).id
    text = str(text).strip().lower()
    if text == "dynamic":
        return "dynamic"
    if text.isdigit():
        return profile.mode(int(text)).id
    return profile.mode_by_slug(text).id


def spread_consumption(ce: int, kappa: int) -> list[int]:
    """Split a stage cost into per-slot integer amounts, remainder first."""
    base, rem = divmod(ce, kappa)
    return [base + (1 if i < rem else 0) for i in range(kappa)]


def modes_from_measurements(
    measurements: Sequence[tuple[int, str, float, float]],
    slot_seconds: float,
    unit_joules: float,
) -> tuple[PowerModeSpec, ...]:
    """Build modes from ``(id, label, seconds per job, joules per job)`` rows."""
    out = []
    for mode_id, label, seconds, joules in measurements:
        kappa = max(1, int(round(seconds / slot_seconds)))
        out.append(PowerModeSpec(mode_id, label, kappa, quantize_energy(joules, unit_joules)))
    return tuple(out)
