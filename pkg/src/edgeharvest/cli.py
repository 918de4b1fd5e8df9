"""Command-line entry point: ``edgeharvest {analyze,qlim,powermodes,simulate,sweep}``.

Data goes to ``--out`` or standard output as CSV whose first line is a
``# edgeharvest-csv v1 <kind>`` comment; progress goes to standard error.
Exit status is 0 on success, 2 for configuration errors and 3 for
numerical failures.
"""
from __future__ import annotations

import argparse
import csv
import io
import logging
import math
import sys
import numpy as np

from . import __version__
from .chain import (
    ChainError,
    UndefinedMetricError,
    avg_energy,
    build_chain,
    downtime_risk,
    expected_kappa,
    export_chain_csv,
    stationary_distribution,
)
from .config import Config, ConfigError, ExperimentSpec, default_config_path, load_config
from .energy import EnergyModelError, parse_mode_policy, policy_label
from .planner import BracketError, DegenerateWeightsError, RiskCache, find_q_lim, risk_curve
from .sim import SimConfig, SimMetrics, Topology, run, sweep

log = logging.getLogger("edgeharvest")

CSV_TAG = "edgeharvest-csv v1"
EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3
MODES = ("15w", "30w", "60w", "dynamic")
POLICY_FLAGS = {"uniform": "uniform", "long-term": "long_term", "adaptive": "adaptive"}


def fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return "nan" if math.isnan(v) else format(v, ".12g")
    return "" if v is None else str(v)


def render_csv(kind: str, header, rows) -> str:
    buf = io.StringIO()
    buf.write(f"# {CSV_TAG} {kind}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([fmt(row[h]) for h in header])
    return buf.getvalue()


# experiment kinds -> (header, rows)

def chain_metrics(payload) -> tuple[list, list]:
    prof, q, mode = payload["profile"], payload["q"], payload["mode"]
    e_lim = payload.get("e_lim", prof.e_th)
    chain = build_chain(prof, q, mode)
    dist = stationary_distribution(chain)
    try:
        kb = expected_kappa(dist, chain)
    except UndefinedMetricError:
        kb = math.nan
    if payload.get("export_dir"):
        export_chain_csv(chain, payload["export_dir"])
    row = {
        "mode": payload["mode_name"],
        "q": q,
        "n_states": chain.n_states,
        "n_reachable": dist.reachable.size,
        "avg_energy_units": avg_energy(dist, chain),
        "avg_energy_fraction": avg_energy(dist, chain) / prof.e_max,
        "avg_energy_slot_fraction": avg_energy(dist, chain, time_weighted=True) / prof.e_max,
        "e_lim": e_lim,
        "xi": downtime_risk(dist, chain, e_lim),
        "kappa_bar": kb,
        "residual": dist.residual,
        "solver": dist.method,
    }
    return list(row), [row]


def qlim_rows(payload, cache) -> tuple[list, list]:
    prof = payload["profile"]
    rows = []
    if payload.get("curve"):
        for name in payload["modes"]:
            mode = parse_mode_policy(prof, name)
            for q, xi in zip(payload["q_grid"], risk_curve(prof, mode, payload["q_grid"], payload["e_lim"], cache)):
                rows.append({"mode": name, "q": q, "xi": xi})
            log.info("risk curve %s done", name)
        return ["mode", "q", "xi"], rows
    for name in payload["modes"]:
        plan = find_q_lim(prof, parse_mode_policy(prof, name), payload["xi_lim"], payload["e_lim"], cache=cache)
        log.info("q_lim %s = %.6g (%s)", name, plan.q_lim, plan.binding)
        rows.append(
            {
                "device": payload.get("device", "device"),
                "policy": name,
                "q_lim_energy": plan.q_lim_energy,
                "kappa_bar": plan.kappa_bar,
                "q_lim": plan.q_lim,
                "binding": plan.binding,
            }
        )
    return ["device", "policy", "q_lim_energy", "kappa_bar", "q_lim", "binding"], rows


def powermode_rows(payload, workers=1) -> tuple[list, list]:
    prof = payload["profile"]
    top = Topology(((prof,),))
    rows = []
    for name in payload["modes"]:
        m = run(
            SimConfig(
                top,
                payload["p"],
                payload["horizon"],
                mode_policy=parse_mode_policy(prof, name),
                replications=payload["reps"],
                seed=payload["seed"],
                initial_energy=payload["initial_energy"],
                workers=workers,
            )
        )
        log.info("powermode %s: %.2f jobs, battery %.3f", name, m.completed.mean(), m.mean_battery_fraction.mean())
        rows.append(
            {
                "mode": name,
                "reps": payload["reps"],
                "horizon": payload["horizon"],
                "jobs_completed_mean": float(m.completed.mean()),
                "jobs_completed_std": _std(m.completed),
                "battery_mean": float(m.mean_battery_fraction.mean()),
                "battery_std": _std(m.mean_battery_fraction),
                "downtime_mean": float(m.downtime_fraction.mean()),
                "downtime_std": _std(m.downtime_fraction),
            }
        )
    return list(rows[0]), rows


def _std(x) -> float:
    x = np.asarray(x, dtype=float)
    return float(x.std(ddof=1)) if x.size > 1 else 0.0


def network_rows(payload, cache) -> tuple[list, list]:
    cfg: Config = payload["config"]
    template = payload["template"]
    rows = []
    for r in sweep(
        template,
        payload["axis"],
        payload["grid"],
        payload["policies"],
        base_profile=cfg.profile(mean_joules=cfg.network.mean_joules, spread=cfg.network.spread),
        multipliers=cfg.network.multipliers,
        spread=cfg.network.spread,
        cache=cache,
    ):
        rows.append({"sweep": payload["name"], **r})
    return list(rows[0]), rows


def execute(spec: ExperimentSpec, cache: RiskCache | None = None, workers: int = 1) -> str:
    cache = RiskCache() if cache is None else cache
    if spec.kind == "chain-metrics":
        header, rows = chain_metrics(spec.payload)
    elif spec.kind == "qlim-curve":
        header, rows = qlim_rows(spec.payload, cache)
    elif spec.kind == "single-device-powermodes":
        header, rows = powermode_rows(spec.payload, workers)
    else:
        header, rows = network_rows(spec.payload, cache)
    return render_csv(spec.kind, header, rows)


def simulate_csv(cfg: Config, sim_cfg, raw: bool, cache) -> str:
    m: SimMetrics = run(sim_cfg, cache=cache)
    if not m.conserved():
        raise ChainError("job conservation violated")
    if raw:
        rows = [
            {
                "rep": i,
                "arrived": m.arrived[i],
                "completed": m.completed[i],
                "dropped": m.dropped[i],
                "inflight": m.inflight[i],
                "throughput": m.throughput[i],
                "downtime_fraction": m.downtime_fraction[i],
                "mean_battery_fraction": m.mean_battery_fraction[i],
            }
            for i in range(sim_cfg.replications)
        ]
        return render_csv("network-replications", list(rows[0]), rows)
    row = {
        "policy": sim_cfg.policy,
        "mode": policy_label(sim_cfg.topology.devices[0], sim_cfg.mode_policy),
        "p": sim_cfg.p,
        "reps": sim_cfg.replications,
        "horizon": sim_cfg.horizon,
        **m.summary(),
    }
    return render_csv("network-run", list(row), [row])


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="experiment config (default: bundled defaults)")
    common.add_argument("--seed", type=int, help="master random seed")
    common.add_argument("--reps", type=int, help="replications per run")
    common.add_argument("--out", metavar="PATH", help="write CSV here instead of standard output")
    common.add_argument("--policy", choices=sorted(POLICY_FLAGS), help="scheduling policy")
    common.add_argument("--mode", choices=MODES + ("50w",), help="power-mode policy")
    common.add_argument("--workers", type=int, default=1, help="worker processes for replications")
    common.add_argument("-q", "--quiet", action="store_true", help="no progress output")

    ap = argparse.ArgumentParser(prog="edgeharvest", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("analyze", parents=[common], help="stationary metrics of one device's chain")
    p.add_argument("--q", type=float, help="job arrival probability per slot")
    p.add_argument("--e-lim", type=int, help="risk threshold in energy units")
    p.add_argument("--export-chain", metavar="DIR", help="also write transitions.csv and states.csv")

    p = sub.add_parser("qlim", parents=[common], help="largest safe job rate per power-mode policy")
    p.add_argument("--xi-lim", type=float, help="downtime-risk budget")
    p.add_argument("--e-lim", type=int, help="risk threshold in energy units")
    p.add_argument("--curve", action="store_true", help="emit the risk curve over the configured q grid instead")

    p = sub.add_parser("powermodes", parents=[common], help="single device, jobs and battery per power mode")
    p.add_argument("--horizon", type=int, help="slots per run")

    p = sub.add_parser("simulate", parents=[common], help="one network configuration")
    p.add_argument("--p", type=float, help="job arrival probability per slot")
    p.add_argument("--energy", type=float, help="network mean energy arrival, J/slot")
    p.add_argument("--horizon", type=int, help="slots per run")
    p.add_argument("--raw", action="store_true", help="one row per replication")

    p = sub.add_parser("sweep", parents=[common], help="policy comparison over an energy or job-rate grid")
    p.add_argument("--sweep", metavar="NAME", help="run only this configured sweep")
    return ap


def _spec_for(args, cfg: Config) -> ExperimentSpec:
    an = cfg.analysis
    if args.command == "analyze":
        prof = cfg.profile(an.arrival)
        name = args.mode or an.mode
        q = an.q if args.q is None else args.q
        if not 0.0 <= q <= 1.0:
            raise ConfigError("--q", f"must lie in [0, 1], got {q}")
        payload = dict(profile=prof, q=q, mode=parse_mode_policy(prof, name), mode_name=name, export_dir=args.export_chain)
        if args.e_lim is not None:
            payload["e_lim"] = args.e_lim
        return ExperimentSpec("analyze", "chain-metrics", payload, args.out)
    if args.command == "qlim":
        prof = cfg.profile(an.arrival)
        xi = an.xi_lim if args.xi_lim is None else args.xi_lim
        if not 0.0 < xi < 1.0:
            raise ConfigError("--xi-lim", f"must lie in (0, 1), got {xi}")
        payload = dict(
            profile=prof,
            device=an.arrival,
            modes=(args.mode,) if args.mode else an.modes,
            xi_lim=xi,
            e_lim=cfg.e_lim() if args.e_lim is None else args.e_lim,
            q_grid=an.q_grid,
            curve=args.curve,
        )
        return ExperimentSpec("qlim", "qlim-curve", payload, args.out)
    if args.command == "powermodes":
        pm = cfg.powermodes
        payload = dict(
            profile=cfg.profile(pm.arrival),
            horizon=args.horizon or pm.horizon,
            p=pm.p,
            initial_energy=pm.initial_energy,
            reps=args.reps or pm.reps,
            modes=(args.mode,) if args.mode else pm.modes,
            seed=cfg.seed if args.seed is None else args.seed,
        )
        return ExperimentSpec("powermodes", "single-device-powermodes", payload, args.out)
    raise ValueError(args.command)


def _sim_overrides(args, cfg: Config) -> dict:
    over = {"workers": max(1, args.workers)}
    if args.seed is not None:
        over["seed"] = args.seed
    if args.reps is not None:
        over["replications"] = args.reps
    if args.policy is not None:
        over["policy"] = POLICY_FLAGS[args.policy]
    if args.mode is not None:
        over["mode_policy"] = parse_mode_policy(cfg.profile(), args.mode)
    return over


def _run(args) -> str:
    cfg = load_config(args.config or default_config_path())
    cache = RiskCache()
    if args.command in ("analyze", "qlim", "powermodes"):
        return execute(_spec_for(args, cfg), cache, max(1, args.workers))
    over = _sim_overrides(args, cfg)
    if args.command == "simulate":
        if args.p is not None:
            over["p"] = args.p
        if args.horizon is not None:
            over["horizon"] = args.horizon
        if args.energy is not None:
            over["topology"] = cfg.topology(args.energy)
        return simulate_csv(cfg, cfg.sim_config(**over), args.raw, cache)
    sweeps = cfg.sweeps
    if args.sweep:
        sweeps = tuple(s for s in sweeps if s.name == args.sweep)
        if not sweeps:
            raise ConfigError("--sweep", f"no sweep named {args.sweep!r}; have {[s.name for s in cfg.sweeps]}")
    if not sweeps:
        raise ConfigError("sweeps", "config defines no sweeps")
    parts = []
    for s in sweeps:
        kw = dict(over)
        if s.p is not None:
            kw["p"] = s.p
        if s.mean_joules is not None:
            kw["topology"] = cfg.topology(s.mean_joules)
        policies = (POLICY_FLAGS[args.policy],) if args.policy else s.policies
        template = cfg.sim_config(**kw)
        spec = ExperimentSpec(
            s.name,
            "network-sweep",
            dict(config=cfg, template=template, name=s.name, axis=s.axis, grid=s.grid, policies=policies),
            args.out,
        )
        text = execute(spec, cache)
        # one header comment for the whole file
        parts.append(text if not parts else text.split("\n", 2)[2])
    return "".join(parts)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        stream=sys.stderr, level=logging.WARNING if args.quiet else logging.INFO, format="%(message)s", force=True
    )
    try:
        text = _run(args)
    except (ChainError, BracketError, DegenerateWeightsError, FloatingPointError) as exc:
        print(f"edgeharvest: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, EnergyModelError, ValueError, KeyError) as exc:
        print(f"edgeharvest: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if args.out:
        with open(args.out, "w", newline="") as fh:
            fh.write(text)
        log.info("wrote %s", args.out)
    else:
        sys.stdout.write(text)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
