"""Experiment configuration files.

A config is one YAML document holding the device description, named
energy-arrival settings and the parameters of each experiment family.
Parsing validates every field and reports errors by dotted path and
source line; ``Config.to_dict`` gives back a structure that parses to an
equal ``Config``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

from .energy import (
    DeviceProfile,
    EnergyModelError,
    modes_from_measurements,
    parse_mode_policy,
    quantize_energy,
    uniform_arrival_mdf,
)
from .sim import POLICIES, SimConfig, Topology

SCHEMA_VERSION = 1
KINDS = ("chain-metrics", "qlim-curve", "single-device-powermodes", "network-sweep")


class ConfigError(ValueError):
    def __init__(self, path: str, message: str, line: int | None = None):
        self.path = path
        self.line = line
        where = f"{path}" + (f" (line {line})" if line is not None else "")
        super().__init__(f"{where}: {message}")


def _line_map(text: str) -> dict[str, int]:
    """Dotted path -> 1-based source line, for error messages."""
    try:
        root = yaml.compose(text)
    except yaml.YAMLError:
        return {}
    out: dict[str, int] = {}

    def walk(node, path):
        if node is None:
            return
        out.setdefault(path, node.start_mark.line + 1)
        if isinstance(node, yaml.MappingNode):
            for k, v in node.value:
                walk(v, f"{path}.{k.value}" if path else str(k.value))
        elif isinstance(node, yaml.SequenceNode):
            for i, v in enumerate(node.value):
                walk(v, f"{path}[{i}]")

    walk(root, "")
    return out


class _Reader:
    """Typed access to a nested dict with path-aware errors."""

    def __init__(self, lines: dict[str, int] | None = None):
        self.lines = lines or {}

    def fail(self, path: str, message: str):
        line = self.lines.get(path)
        if line is None and "." in path:
            line = self.lines.get(path.rsplit(".", 1)[0])
        raise ConfigError(path, message, line)

    def section(self, d: dict, key: str, path: str) -> dict:
        p = f"{path}.{key}" if path else key
        v = d.get(key)
        if not isinstance(v, dict):
            self.fail(p, "missing or not a mapping")
        return v

    def number(self, d, key, path, default=None, lo=None, hi=None, integer=False, lo_open=False):
        """Read ``d[key]``, or ``d`` itself as the value at ``path`` when ``key`` is None."""
        if key is None:
            p, v = path, d
        else:
            p = f"{path}.{key}" if path else key
            v = d.get(key, default)
        if v is None:
            self.fail(p, "required")
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            self.fail(p, f"expected a number, got {v!r}")
        if integer and int(v) != v:
            self.fail(p, f"expected an integer, got {v!r}")
        if lo is not None and (v <= lo if lo_open else v < lo):
            self.fail(p, f"must be {'>' if lo_open else '>='} {lo}, got {v!r}")
        if hi is not None and v > hi:
            self.fail(p, f"must be <= {hi}, got {v!r}")
        return int(v) if integer else float(v)

    def text(self, d, key, path, default=None, choices=None):
        p = f"{path}.{key}" if path else key
        v = d.get(key, default)
        if not isinstance(v, str):
            self.fail(p, f"expected text, got {v!r}")
        if choices is not None and v not in choices:
            self.fail(p, f"must be one of {list(choices)}, got {v!r}")
        return v

    def seq(self, d, key, path, default=None, nonempty=True):
        p = f"{path}.{key}" if path else key
        v = d.get(key, default)
        if not isinstance(v, (list, tuple)):
            self.fail(p, f"expected a list, got {v!r}")
        if nonempty and not v:
            self.fail(p, "must not be empty")
        return list(v)


@dataclass(frozen=True)
class ModeEntry:
    id: int
    label: str
    seconds: float
    joules: float


@dataclass(frozen=True)
class DeviceSpec:
    battery_joules: float
    e_th_fraction: float
    e_th_prime_fraction: float
    modes: tuple[ModeEntry, ...]
    pm_lookup: tuple[tuple[float, int], ...]
    base_mode: int


@dataclass(frozen=True)
class ArrivalSpec:
    lo_joules: float
    hi_joules: float


@dataclass(frozen=True)
class AnalysisSpec:
    arrival: str
    q: float
    mode: str
    xi_lim: float
    e_lim_fraction: float
    modes: tuple[str, ...]
    q_grid: tuple[float, ...]


@dataclass(frozen=True)
class PowermodesSpec:
    arrival: str
    horizon: int
    p: float
    initial_energy: float
    reps: int
    modes: tuple[str, ...]


@dataclass(frozen=True)
class NetworkSpec:
    multipliers: tuple[tuple[float, ...], ...]
    spread: float
    mean_joules: float
    p: float
    horizon: int
    initial_energy: float
    xi_lim: float
    alpha: float | None
    mode: str
    policy: str
    reps: int


@dataclass(frozen=True)
class SweepSpec:
    name: str
    axis: str
    grid: tuple[float, ...]
    policies: tuple[str, ...]
    p: float | None = None
    mean_joules: float | None = None


@dataclass(frozen=True)
class Config:
    version: int
    seed: int
    unit_joules: float
    slot_seconds: float
    device: DeviceSpec
    arrivals: dict
    analysis: AnalysisSpec
    powermodes: PowermodesSpec
    network: NetworkSpec
    sweeps: tuple[SweepSpec, ...] = field(default_factory=tuple)

    def profile(self, arrival: str | None = None, mean_joules: float | None = None, spread: float = 0.5) -> DeviceProfile:
        """Device profile with a named arrival setting, or a mean +- spread uniform one."""
        d = self.device
        modes = modes_from_measurements(
            [(m.id, m.label, m.seconds, m.joules) for m in d.modes], self.slot_seconds, self.unit_joules
        )
        e_max = quantize_energy(d.battery_joules, self.unit_joules)
        if mean_joules is not None:
            mdf = uniform_arrival_mdf(mean_joules * (1 - spread), mean_joules * (1 + spread), self.unit_joules)
        else:
            a = self.arrivals[arrival or self.analysis.arrival]
            mdf = uniform_arrival_mdf(a.lo_joules, a.hi_joules, self.unit_joules)
        return DeviceProfile(
            modes,
            e_max,
            int(round(d.e_th_fraction * e_max)),
            int(round(d.e_th_prime_fraction * e_max)),
            d.pm_lookup,
            mdf,
            self.unit_joules,
            d.base_mode,
        )

    def e_lim(self) -> int:
        e_max = quantize_energy(self.device.battery_joules, self.unit_joules)
        return int(round(self.analysis.e_lim_fraction * e_max))

    def topology(self, mean_joules: float | None = None) -> Topology:
        n = self.network
        mean = n.mean_joules if mean_joules is None else mean_joules
        base = self.profile(mean_joules=mean, spread=n.spread)
        return Topology.from_means(base, [[mean * m for m in row] for row in n.multipliers], n.spread)

    def sim_config(self, **overrides) -> SimConfig:
        n = self.network
        kw = dict(
            topology=self.topology(),
            p=n.p,
            horizon=n.horizon,
            policy=n.policy,
            mode_policy=parse_mode_policy(self.profile(), n.mode),
            replications=n.reps,
            seed=self.seed,
            delta_seconds=self.slot_seconds,
            alpha=n.alpha,
            initial_energy=n.initial_energy,
            xi_lim=n.xi_lim,
        )
        kw.update(overrides)
        return SimConfig(**kw)

    def to_dict(self) -> dict:
        d = self.device
        n = self.network
        return {
            "version": self.version,
            "seed": self.seed,
            "unit_joules": self.unit_joules,
            "slot_seconds": self.slot_seconds,
            "device": {
                "battery_joules": d.battery_joules,
                "e_th_fraction": d.e_th_fraction,
                "e_th_prime_fraction": d.e_th_prime_fraction,
                "modes": [
                    {"id": m.id, "label": m.label, "seconds": m.seconds, "joules": m.joules} for m in d.modes
                ],
                "pm_lookup": [[f, m] for f, m in d.pm_lookup],
                "base_mode": d.base_mode,
            },
            "arrivals": {k: {"lo_joules": a.lo_joules, "hi_joules": a.hi_joules} for k, a in self.arrivals.items()},
            "analysis": {
                "arrival": self.analysis.arrival,
                "q": self.analysis.q,
                "mode": self.analysis.mode,
                "xi_lim": self.analysis.xi_lim,
                "e_lim_fraction": self.analysis.e_lim_fraction,
                "modes": list(self.analysis.modes),
                "q_grid": list(self.analysis.q_grid),
            },
            "powermodes": {
                "arrival": self.powermodes.arrival,
                "horizon": self.powermodes.horizon,
                "p": self.powermodes.p,
                "initial_energy": self.powermodes.initial_energy,
                "reps": self.powermodes.reps,
                "modes": list(self.powermodes.modes),
            },
            "network": {
                "multipliers": [list(r) for r in n.multipliers],
                "spread": n.spread,
                "mean_joules": n.mean_joules,
                "p": n.p,
                "horizon": n.horizon,
                "initial_energy": n.initial_energy,
                "xi_lim": n.xi_lim,
                "alpha": n.alpha,
                "mode": n.mode,
                "policy": n.policy,
                "reps": n.reps,
            },
            "sweeps": [
                {
                    k: v
                    for k, v in {
                        "name": s.name,
                        "axis": s.axis,
                        "grid": list(s.grid),
                        "policies": list(s.policies),
                        "p": s.p,
                        "mean_joules": s.mean_joules,
                    }.items()
                    if v is not None
                }
                for s in self.sweeps
            ],
        }


def _mode_names(r: _Reader, items, path, profile_modes) -> tuple[str, ...]:
    out = []
    for i, m in enumerate(items):
        if not isinstance(m, str):
            r.fail(f"{path}[{i}]", f"expected a mode name, got {m!r}")
        if m != "dynamic" and m not in profile_modes:
            r.fail(f"{path}[{i}]", f"unknown mode {m!r}; known: {sorted(profile_modes) + ['dynamic']}")
        out.append(m)
    return tuple(out)


def parse_config(data: Any, lines: dict[str, int] | None = None) -> Config:
    r = _Reader(lines)
    if not isinstance(data, dict):
        r.fail("<root>", "config must be a mapping")
    version = r.number(data, "version", "", default=SCHEMA_VERSION, integer=True)
    if version != SCHEMA_VERSION:
        r.fail("version", f"unsupported schema version {version}, expected {SCHEMA_VERSION}")
    seed = r.number(data, "seed", "", default=0, integer=True, lo=0)
    unit = r.number(data, "unit_joules", "", default=100.0, lo=0, lo_open=True)
    slot = r.number(data, "slot_seconds", "", default=100.0, lo=0, lo_open=True)

    dv = r.section(data, "device", "")
    modes = []
    for i, m in enumerate(r.seq(dv, "modes", "device")):
        p = f"device.modes[{i}]"
        if not isinstance(m, dict):
            r.fail(p, "expected a mapping")
        modes.append(
            ModeEntry(
                r.number(m, "id", p, integer=True, lo=1),
                r.text(m, "label", p),
                r.number(m, "seconds", p, lo=0, lo_open=True),
                r.number(m, "joules", p, lo=0),
            )
        )
    if len({m.id for m in modes}) != len(modes):
        r.fail("device.modes", "mode ids must be unique")
    lookup = []
    for i, pair in enumerate(r.seq(dv, "pm_lookup", "device")):
        p = f"device.pm_lookup[{i}]"
        if not isinstance(pair, (list, tuple)) or len(pair) != 2:
            r.fail(p, "expected [battery_fraction, mode_id]")
        lookup.append((r.number(pair[0], None, f"{p}[0]", lo=0, hi=1), r.number(pair[1], None, f"{p}[1]", integer=True)))
    device = DeviceSpec(
        r.number(dv, "battery_joules", "device", lo=0, lo_open=True),
        r.number(dv, "e_th_fraction", "device", lo=0, hi=1),
        r.number(dv, "e_th_prime_fraction", "device", lo=0, hi=1),
        tuple(modes),
        tuple(lookup),
        r.number(dv, "base_mode", "device", default=min(m.id for m in modes), integer=True),
    )
    if not device.e_th_fraction < device.e_th_prime_fraction:
        r.fail("device.e_th_prime_fraction", "must exceed device.e_th_fraction (e_th < e'_th)")

    arr = r.section(data, "arrivals", "")
    arrivals = {}
    for name, a in arr.items():
        p = f"arrivals.{name}"
        if not isinstance(a, dict):
            r.fail(p, "expected a mapping with lo_joules and hi_joules")
        lo = r.number(a, "lo_joules", p, lo=0)
        hi = r.number(a, "hi_joules", p, lo=0)
        if hi < lo:
            r.fail(f"{p}.hi_joules", "must be >= lo_joules")
        arrivals[str(name)] = ArrivalSpec(lo, hi)
    if not arrivals:
        r.fail("arrivals", "must define at least one arrival setting")

    def arrival_name(d, path):
        name = r.text(d, "arrival", path)
        if name not in arrivals:
            r.fail(f"{path}.arrival", f"unknown arrival setting {name!r}; known: {sorted(arrivals)}")
        return name

    slugs = {m.label.replace(" ", "").lower() for m in modes}
    an = r.section(data, "analysis", "")
    analysis = AnalysisSpec(
        arrival_name(an, "analysis"),
        r.number(an, "q", "analysis", default=0.3, lo=0, hi=1),
        _mode_names(r, [r.text(an, "mode", "analysis", default="dynamic")], "analysis.mode", slugs)[0],
        r.number(an, "xi_lim", "analysis", default=0.01, lo=0, hi=1, lo_open=True),
        r.number(an, "e_lim_fraction", "analysis", default=device.e_th_fraction, lo=0, hi=1),
        _mode_names(r, r.seq(an, "modes", "analysis", default=["dynamic"]), "analysis.modes", slugs),
        tuple(r.number(q, None, f"analysis.q_grid[{i}]", lo=0, hi=1) for i, q in enumerate(r.seq(an, "q_grid", "analysis", default=[0.1, 0.5]))),
    )

    pm = r.section(data, "powermodes", "")
    powermodes = PowermodesSpec(
        arrival_name(pm, "powermodes"),
        r.number(pm, "horizon", "powermodes", default=100, integer=True, lo=1),
        r.number(pm, "p", "powermodes", default=1.0, lo=0, hi=1),
        r.number(pm, "initial_energy", "powermodes", default=1.0, lo=0, hi=1),
        r.number(pm, "reps", "powermodes", default=1, integer=True, lo=1),
        _mode_names(r, r.seq(pm, "modes", "powermodes", default=["dynamic"]), "powermodes.modes", slugs),
    )

    nw = r.section(data, "network", "")
    mult = []
    for i, row in enumerate(r.seq(nw, "multipliers", "network")):
        p = f"network.multipliers[{i}]"
        if not isinstance(row, (list, tuple)) or not row:
            r.fail(p, "each layer needs at least one device multiplier")
        mult.append(tuple(r.number(m, None, f"{p}[{j}]", lo=0, lo_open=True) for j, m in enumerate(row)))
    alpha = nw.get("alpha")
    if alpha is not None:
        alpha = r.number(nw, "alpha", "network", lo=0, hi=min(len(row) for row in mult))
    network = NetworkSpec(
        tuple(mult),
        r.number(nw, "spread", "network", default=0.5, lo=0, hi=1),
        r.number(nw, "mean_joules", "network", lo=0),
        r.number(nw, "p", "network", default=0.3, lo=0, hi=1),
        r.number(nw, "horizon", "network", default=100, integer=True, lo=1),
        r.number(nw, "initial_energy", "network", default=1.0, lo=0, hi=1),
        r.number(nw, "xi_lim", "network", default=0.01, lo=0, hi=1, lo_open=True),
        alpha,
        _mode_names(r, [r.text(nw, "mode", "network", default="dynamic")], "network.mode", slugs)[0],
        r.text(nw, "policy", "network", default="uniform", choices=POLICIES),
        r.number(nw, "reps", "network", default=1, integer=True, lo=1),
    )

    sweeps = []
    for i, s in enumerate(r.seq(data, "sweeps", "", default=[], nonempty=False)):
        p = f"sweeps[{i}]"
        if not isinstance(s, dict):
            r.fail(p, "expected a mapping")
        axis = r.text(s, "axis", p, choices=("energy", "p"))
        hi = 1 if axis == "p" else None
        grid = tuple(r.number(v, None, f"{p}.grid[{j}]", lo=0, hi=hi) for j, v in enumerate(r.seq(s, "grid", p)))
        pols = r.seq(s, "policies", p, default=list(POLICIES))
        for j, pol in enumerate(pols):
            if pol not in POLICIES:
                r.fail(f"{p}.policies[{j}]", f"must be one of {list(POLICIES)}, got {pol!r}")
        sweeps.append(
            SweepSpec(
                r.text(s, "name", p, default=f"sweep{i}"),
                axis,
                grid,
                tuple(pols),
                r.number(s, "p", p, lo=0, hi=1) if "p" in s else None,
                r.number(s, "mean_joules", p, lo=0) if "mean_joules" in s else None,
            )
        )
    if len({s.name for s in sweeps}) != len(sweeps):
        r.fail("sweeps", "sweep names must be unique")

    cfg = Config(version, seed, unit, slot, device, arrivals, analysis, powermodes, network, tuple(sweeps))
    try:
        prof = cfg.profile()
    except EnergyModelError as exc:
        r.fail("device", str(exc))
    for m in analysis.modes + powermodes.modes + (analysis.mode, network.mode):
        parse_mode_policy(prof, m)
    return cfg


def loads_config(text: str) -> Config:
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise ConfigError("<yaml>", str(getattr(exc, "problem", exc)), mark.line + 1 if mark else None) from exc
    return parse_config(data, _line_map(text))


def load_config(path) -> Config:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(str(path), f"cannot read config: {exc.strerror}") from exc
    return loads_config(text)


def dump_config(cfg: Config) -> str:
    return yaml.safe_dump(cfg.to_dict(), sort_keys=False, default_flow_style=None)


def default_config_path() -> Path:
    return Path(__file__).with_name("data") / "defaults.yaml"


@dataclass(frozen=True)
class ExperimentSpec:
    """One runnable experiment: a kind, its validated payload and where output goes."""

    name: str
    kind: str
    payload: dict
    out: str | None = None

    REQUIRED = {
        "chain-metrics": ("profile", "q", "mode"),
        "qlim-curve": ("profile", "modes", "xi_lim", "e_lim"),
        "single-device-powermodes": ("profile", "horizon", "p", "initial_energy", "reps", "modes", "seed"),
        "network-sweep": ("config", "axis", "grid", "policies"),
    }

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError("kind", f"must be one of {list(KINDS)}, got {self.kind!r}")
        missing = [k for k in self.REQUIRED[self.kind] if k not in self.payload]
        if missing:
            raise ConfigError(f"{self.name}.payload", f"{self.kind} needs {missing}")
