"""Semi-Markov model of one harvesting device.

States are ``(Q, E, gamma)``: queue occupancy, battery units and the
active flag. The embedded chain is observed at stage boundaries; a stage
lasts one slot when the device idles or saves power and ``kappa`` slots
when it processes a job. Time averages weight the embedded stationary
vector by those dwell times.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np
import scipy.linalg
import scipy.sparse as sp
from scipy.sparse import csgraph

from . import kernels
from .energy import DeviceProfile, convolve_mdf, mode_table, policy_label, stage_arrival_prob

DENSE_LIMIT = 20_000


class ChainError(RuntimeError):
    pass


class MultipleClosedClassesError(ChainError):
    pass


class NumericalError(ChainError):
    def __init__(self, message, residual=float("nan")):
        super().__init__(message)
        self.residual = residual


class UndefinedMetricError(ChainError):
    pass


class NodeState(NamedTuple):
    q: int
    e: int
    gamma: int


def state_index(q: int, e: int, gamma: int) -> int:
    """Energy-major ordering keeps the transition matrix banded."""
    return 4 * e + 2 * q + gamma


@dataclass(frozen=True, eq=False)
class SemiMarkovChain:
    profile: DeviceProfile
    q_input: float
    policy: object
    P: sp.csr_matrix
    dwell: np.ndarray
    mode_of: np.ndarray

    @property
    def n_states(self) -> int:
        return self.P.shape[0]

    @property
    def energy(self) -> np.ndarray:
        return np.arange(self.n_states) // 4

    @property
    def queue(self) -> np.ndarray:
        return (np.arange(self.n_states) // 2) % 2

    @property
    def gamma(self) -> np.ndarray:
        return np.arange(self.n_states) % 2

    @property
    def states(self) -> list[NodeState]:
        return [NodeState(int(q), int(e), int(g)) for q, e, g in zip(self.queue, self.energy, self.gamma)]

    def index(self, state) -> int:
        q, e, g = state
        return state_index(q, e, g)

    def successors(self, state) -> dict[NodeState, float]:
        row = self.P.getrow(self.index(state))
        return {NodeState((j // 2) % 2, j // 4, j % 2): float(v) for j, v in zip(row.indices, row.data)}


def build_chain(profile: DeviceProfile, q_input: float, mode_policy="dynamic") -> SemiMarkovChain:
    """Enumerate all ``2 x (e_max+1) x 2`` states and their transition rows."""
    if not 0.0 <= q_input <= 1.0:
        raise ValueError(f"q_input must lie in [0, 1], got {q_input}")
    if profile.arrival is None:
        raise ChainError("profile has no arrival distribution")
    e_max, e_th, e_thp = profile.e_max, profile.e_th, profile.e_th_prime
    modes = mode_table(profile, mode_policy)
    n = 4 * (e_max + 1)
    E = np.arange(e_max + 1)
    f = profile.arrival.probs
    k = np.arange(f.size)
    rows, cols, vals = [], [], []

    def add(src, dst, prob):
        rows.append(np.broadcast_to(src, dst.shape).ravel())
        cols.append(dst.ravel())
        vals.append(np.broadcast_to(prob, dst.shape).ravel())

    # one-slot stages; clamping at e_max folds the upper tail onto the boundary
    e_next = np.minimum(E[:, None] + k[None, :], e_max)
    # active and idle: no consumption, an arrival fills the queue
    src = state_index(0, E, 1)[:, None]
    add(src, state_index(0, e_next, 1), (1.0 - q_input) * f[None, :])
    add(src, state_index(1, e_next, 1), q_input * f[None, :])
    # power saving: arrivals are rejected, the pending job (if any) is held
    wake = (e_next > e_thp).astype(np.int64)
    for q in (0, 1):
        add(state_index(q, E, 0)[:, None], state_index(q, e_next, wake), f[None, :])

    # processing stages, grouped by the mode latched at stage start
    dwell = np.ones(n, dtype=np.int64)
    mode_of = np.zeros(n, dtype=np.int64)
    for mode_id in np.unique(modes):
        spec = profile.mode(int(mode_id))
        e_here = E[modes == mode_id]
        busy = state_index(1, e_here, 1)
        dwell[busy] = spec.kappa
        mode_of[busy] = spec.id
        g = convolve_mdf(profile.arrival, spec.kappa).probs
        pm = stage_arrival_prob(q_input, spec.kappa)
        kk = np.arange(g.size)
        e_next = np.clip(e_here[:, None] + kk[None, :] - spec.ce_units, 0, e_max)
        active = (e_next >= e_th).astype(np.int64)
        add(busy[:, None], state_index(0, e_next, active), (1.0 - pm) * g[None, :])
        add(busy[:, None], state_index(1, e_next, active), pm * g[None, :])

    P = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n)
    ).tocsr()
    P.sum_duplicates()
    P.eliminate_zeros()
    return SemiMarkovChain(profile, float(q_input), mode_policy, P, dwell, mode_of)


def default_start(chain: SemiMarkovChain) -> int:
    return state_index(0, chain.profile.e_max, 1)


def reachable_closed_class(chain, start=None) -> np.ndarray:
    """Sorted indices of states reachable from ``start`` (default: idle, full battery)."""
    P = chain.P if isinstance(chain, SemiMarkovChain) else sp.csr_matrix(chain)
    if start is None:
        start = default_start(chain) if isinstance(chain, SemiMarkovChain) else 0
    elif not isinstance(start, (int, np.integer)):
        start = state_index(*start)
    order = csgraph.breadth_first_order(P, int(start), directed=True, return_predecessors=False)
    return np.sort(order)


@dataclass(frozen=True, eq=False)
class StationaryDist:
    pi: np.ndarray
    reachable: np.ndarray
    residual: float
    method: str

    def full(self, n_states: int) -> np.ndarray:
        out = np.zeros(n_states)
        out[self.reachable] = self.pi
        return out


def _resolve_method(method: str, n: int) -> str:
    if method == "auto":
        return "gth" if n <= DENSE_LIMIT else "power"
    return method


def _solve_irreducible(P: sp.csr_matrix, method: str) -> np.ndarray:
    n = P.shape[0]
    method = _resolve_method(method, n)
    if method == "gth":
        return kernels.gth_stationary(np.ascontiguousarray(P.toarray()))
    if method == "dense":
        # balance equations with the last one swapped for normalisation
        A = np.eye(n) - P.toarray().T
        A[-1, :] = 1.0
        b = np.zeros(n)
        b[-1] = 1.0
        pi = scipy.linalg.solve(A, b)
        pi = np.clip(pi, 0.0, None)
        return pi / pi.sum()
    if method == "power":
        # lazy chain (P + I)/2: same fixed point, no periodicity
        Pt = P.T.tocsr()
        pi = np.full(n, 1.0 / n)
        for _ in range(1_000_000):
            nxt = 0.5 * (pi + Pt @ pi)
            nxt /= nxt.sum()
            if np.max(np.abs(nxt - pi)) <= 1e-12 and np.max(np.abs(Pt @ nxt - nxt)) <= 1e-12:
                return nxt
            pi = nxt
        res = float(np.max(np.abs(Pt @ pi - pi)))
        raise NumericalError(f"power iteration did not converge (residual {res:.3e})", res)
    raise ValueError(f"unknown stationary method {method!r}")


def stationary_distribution(chain, method: str = "auto", start=None, tol: float = 1e-10) -> StationaryDist:
    """Stationary vector of the embedded chain on the class reachable from ``start``.

    ``chain`` may also be a bare row-stochastic matrix (dense or sparse), in
    which case ``start`` defaults to state 0.
    """
    P = chain.P if isinstance(chain, SemiMarkovChain) else sp.csr_matrix(np.asarray(chain, dtype=float) if not sp.issparse(chain) else chain)
    reach = reachable_closed_class(chain if isinstance(chain, SemiMarkovChain) else P, start)
    sub = P[reach][:, reach].tocsr()
    ncomp, labels = csgraph.connected_components(sub, directed=True, connection="strong")
    if ncomp == 1:
        closed = np.arange(reach.size)
    else:
        # a class is closed when no edge leaves it
        coo = sub.tocoo()
        leaving = np.zeros(ncomp, dtype=bool)
        cross = labels[coo.row] != labels[coo.col]
        leaving[labels[coo.row[cross]]] = True
        closed_ids = np.flatnonzero(~leaving)
        if closed_ids.size != 1:
            raise MultipleClosedClassesError(f"{closed_ids.size} closed classes reachable from the start state")
        closed = np.flatnonzero(labels == closed_ids[0])
    pc = sub[closed][:, closed].tocsr()
    pi_c = _solve_irreducible(pc, method)
    pi = np.zeros(reach.size)
    pi[closed] = pi_c
    residual = float(np.max(np.abs(sub.T @ pi - pi)))
    if not residual <= tol:
        raise NumericalError(f"stationary residual {residual:.3e} exceeds {tol:.1e}", residual)
    return StationaryDist(pi, reach, residual, _resolve_method(method, pc.shape[0]))


def _restricted(dist: StationaryDist, values: np.ndarray) -> np.ndarray:
    return values[dist.reachable]


def avg_energy(dist: StationaryDist, chain: SemiMarkovChain, time_weighted: bool = False) -> float:
    """Average battery level in units.

    The default is the literal ratio ``sum(pi*E) / sum(pi*T)``;
    ``time_weighted`` also weights the numerator by dwell time, which is
    the per-slot average a simulation measures.
    """
    e = _restricted(dist, chain.energy).astype(float)
    t = _restricted(dist, chain.dwell).astype(float)
    num = np.dot(dist.pi, e * t) if time_weighted else np.dot(dist.pi, e)
    return float(num / np.dot(dist.pi, t))


def downtime_risk(dist: StationaryDist, chain: SemiMarkovChain, e_lim: int) -> float:
    """Fraction of slots spent with battery at or below ``e_lim``."""
    e = _restricted(dist, chain.energy)
    w = dist.pi * _restricted(dist, chain.dwell)
    return float(w[e <= e_lim].sum() / w.sum())


def expected_kappa(dist: StationaryDist, chain: SemiMarkovChain) -> float:
    """Mean processing slots per job over busy active states."""
    busy = (_restricted(dist, chain.queue) == 1) & (_restricted(dist, chain.gamma) == 1)
    mass = dist.pi[busy]
    if not mass.sum() > 0.0:
        raise UndefinedMetricError("no stationary mass on busy states")
    kappas = _restricted(dist, chain.dwell)[busy]
    used = np.unique(kappas[mass > 0.0])
    if used.size == 1:
        return float(used[0])
    return float(np.dot(mass, kappas) / mass.sum())


def describe(chain: SemiMarkovChain) -> str:
    return f"{policy_label(chain.profile, chain.policy)} q={chain.q_input:g}"


def export_chain_csv(chain: SemiMarkovChain, directory) -> tuple[Path, Path]:
    """Write ``transitions.csv`` (sparse triplets) and ``states.csv``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    trans = directory / "transitions.csv"
    states = directory / "states.csv"
    coo = chain.P.tocoo()
    with trans.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["row_state", "col_state", "prob"])
        for i, j, v in zip(coo.row, coo.col, coo.data):
            w.writerow([int(i), int(j), repr(float(v))])
    with states.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["index", "Q", "E", "gamma", "dwell", "mode"])
        for i, (q, e, g) in enumerate(zip(chain.queue, chain.energy, chain.gamma)):
            w.writerow([i, int(q), int(e), int(g), int(chain.dwell[i]), int(chain.mode_of[i])])
    return trans, states
