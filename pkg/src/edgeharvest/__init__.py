"""Energy-aware scheduling for layered inference on energy-harvesting edge devices."""
__version__ = "0.1.0"

from .chain import (  # noqa: E402
    SemiMarkovChain,
    avg_energy,
    build_chain,
    downtime_risk,
    expected_kappa,
    stationary_distribution,
)
from .energy import DeviceProfile, EnergyMdf, PowerModeSpec, convolve_mdf, uniform_arrival_mdf  # noqa: E402
from .planner import RatePlan, adaptive_weights, find_q_lim, long_term_weights, uniform_weights  # noqa: E402
from .sim import SimConfig, SimMetrics, Topology, run, sweep  # noqa: E402

__all__ = [
    "DeviceProfile",
    "EnergyMdf",
    "PowerModeSpec",
    "RatePlan",
    "SemiMarkovChain",
    "SimConfig",
    "SimMetrics",
    "Topology",
    "adaptive_weights",
    "avg_energy",
    "build_chain",
    "convolve_mdf",
    "downtime_risk",
    "expected_kappa",
    "find_q_lim",
    "long_term_weights",
    "run",
    "stationary_distribution",
    "sweep",
    "uniform_arrival_mdf",
    "uniform_weights",
]
