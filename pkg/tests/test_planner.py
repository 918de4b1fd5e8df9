import math
import threading
from fractions import Fraction

import numpy as np
import pytest
import scipy.optimize
from hypothesis import assume, given
from hypothesis import strategies as st

from edgeharvest.energy import EnergyMdf
from edgeharvest.planner import (
    BracketError,
    DegenerateWeightsError,
    RiskCache,
    adaptive_weights,
    brent_root,
    find_q_lim,
    long_term_weights,
    risk_curve,
    uniform_weights,
)

from .conftest import small_profile


class TestBrent:
    def test_sqrt_two(self):
        assert abs(brent_root(lambda x: x * x - 2, 1, 2, tol=1e-10) - math.sqrt(2)) <= 1e-10

    def test_identity(self):
        assert brent_root(lambda x: x, -1, 1) == pytest.approx(0.0, abs=1e-10)

    def test_no_bracket(self):
        with pytest.raises(BracketError):
            brent_root(lambda x: x * x + 1, -1, 1)

    @given(
        st.floats(-5, 5),
        st.floats(0.01, 10),
        st.floats(0.1, 10),
        st.floats(0.1, 5),
        st.floats(0.1, 5),
    )
    def test_against_scipy_brentq(self, r, a, b, left, right):
        def f(x):
            return a * (x - r) ** 3 + b * (x - r)

        calls = []

        def counted(x):
            calls.append(x)
            return f(x)

        lo, hi = r - left, r + right
        ours = brent_root(counted, lo, hi, tol=1e-10)
        ref = scipy.optimize.brentq(f, lo, hi, xtol=1e-12, rtol=4 * np.finfo(float).eps)
        assert abs(ours - ref) <= 1e-10
        assert abs(ours - r) <= 1e-10
        assert len(calls) <= 200


def poor(prof, hi):
    p = np.full(hi + 1, 1.0 / (hi + 1))
    return prof.with_arrival(EnergyMdf(p))


class TestQLim:
    def test_time_bound_modes(self, analysis_profile):
        cache = RiskCache()
        for mode, kappa in ((1, 3), (2, 2)):
            plan = find_q_lim(analysis_profile, mode, 0.01, 100, cache=cache)
            assert plan.binding == "time"
            assert plan.q_lim == 1.0 / kappa
            assert plan.kappa_bar == kappa

    def test_sixty_watt_energy_bound(self, analysis_profile):
        plan = find_q_lim(analysis_profile, 3, 0.01, 100)
        assert plan.binding == "energy"
        assert plan.q_lim == pytest.approx(0.33, abs=0.02)
        xi = risk_curve(analysis_profile, 3, [plan.q_lim_energy], 100)[0]
        assert xi == pytest.approx(0.01, rel=1e-5)

    def test_dynamic_limit_under_default_arrivals(self, analysis_profile):
        plan = find_q_lim(analysis_profile, "dynamic", 0.01, 100)
        # the risk never reaches 1 % below q = 1, so the processing time binds
        assert plan.q_lim_energy == 1.0
        assert plan.binding == "time"
        assert 2 < plan.kappa_bar < 3
        assert plan.q_lim == pytest.approx(1 / plan.kappa_bar, abs=1e-15)

    def test_infeasible_is_a_result(self):
        # even at the smallest rate the risk exceeds a 1e-15 budget
        prof = poor(small_profile(), 1)
        plan = find_q_lim(prof, 3, 1e-15)
        assert not plan.feasible and plan.q_lim == 0.0

    def test_bad_xi_lim(self, small):
        with pytest.raises(ValueError):
            find_q_lim(small, 3, 0.0)

    def test_monotone_in_budget(self):
        prof = small_profile(hi=6)
        vals = [find_q_lim(prof, 3, x, 4).q_lim_energy for x in (0.005, 0.02, 0.08)]
        assert vals == sorted(vals) and vals[0] < vals[-1]

    def test_monotone_in_arrivals(self):
        # hi = 4 < 6 < 8: each uniform MDF is dominated by the next
        vals = [find_q_lim(poor(small_profile(), hi), 3, 0.02, 4).q_lim_energy for hi in (4, 6, 8)]
        assert vals == sorted(vals) and vals[0] < vals[-1]

    def test_cache_reuse_and_threads(self, small):
        cache = RiskCache()
        qs = [0.1, 0.2, 0.3]
        first = risk_curve(small, "dynamic", qs, cache=cache)
        n = len(cache)
        results = []

        def worker():
            results.append(risk_curve(small, "dynamic", qs, cache=cache))

        threads = [threading.Thread(target=worker) for _ in range(4)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        assert len(cache) == n == 3
        assert all(r == first for r in results)


class TestWeights:
    def test_uniform(self):
        assert uniform_weights(["d1", "d2", "d3"]).weights == pytest.approx((1 / 3,) * 3, abs=1e-15)
        assert uniform_weights(["d2"]).as_dict() == {"d2": 1.0}
        empty = uniform_weights([])
        assert not empty.available and empty.weights == ()

    def test_long_term_examples(self):
        assert long_term_weights([1 / 3, 1 / 2, 1 / 6]).weights == pytest.approx((1 / 3, 1 / 2, 1 / 6), abs=1e-15)
        assert long_term_weights([0.2, 0.2]).weights == (0.5, 0.5)
        w = long_term_weights([0.64, 0.33, 0.5]).weights
        assert w == pytest.approx((0.64 / 1.47, 0.33 / 1.47, 0.5 / 1.47), abs=1e-15)

    def test_long_term_degenerate(self):
        with pytest.raises(DegenerateWeightsError):
            long_term_weights([0.0, 0.0])

    @given(st.lists(st.floats(1e-3, 1), min_size=1, max_size=6), st.floats(1e-3, 1e3))
    def test_long_term_scale_invariant(self, q, c):
        a = long_term_weights(q).weights
        b = long_term_weights([c * x for x in q]).weights
        np.testing.assert_allclose(a, b, rtol=1e-12)
        assert sum(a) == pytest.approx(1, abs=1e-12)

    def test_adaptive_hand_trace(self):
        q = [Fraction(1, 3)] * 3
        x = [v / sum(q) for v in q]
        z = Fraction(1, 3)
        x[0] = x[0] - (1 - z) * x[0]
        x = [v / sum(x) for v in x]
        assert x == [Fraction(1, 7), Fraction(3, 7), Fraction(3, 7)]
        got = adaptive_weights([0.3, 0.3, 0.3], [1, 2, 3], alpha=1).weights
        np.testing.assert_allclose(got, [float(v) for v in x], rtol=0, atol=1e-12)

    def test_adaptive_no_critical_devices(self):
        q = [0.2, 0.5, 0.3]
        assert adaptive_weights(q, [2, 3, 2], alpha=0.5).weights == long_term_weights(q).weights

    def test_adaptive_full_alpha(self):
        q = [0.2, 0.5, 0.3]
        np.testing.assert_allclose(adaptive_weights(q, [1, 1, 3], alpha=3).weights, long_term_weights(q).weights)

    def test_adaptive_default_alpha(self):
        a = adaptive_weights([0.3, 0.3, 0.3], [1, 2, 3]).weights
        b = adaptive_weights([0.3, 0.3, 0.3], [1, 2, 3], alpha=1).weights
        assert a == b

    def test_adaptive_alpha_range(self):
        with pytest.raises(ValueError):
            adaptive_weights([0.3, 0.3], [1, 2], alpha=3)

    @given(
        st.lists(st.tuples(st.floats(1e-3, 1), st.sampled_from([1, 2, 3])), min_size=1, max_size=6),
        st.floats(0, 1),
    )
    def test_adaptive_properties(self, devs, frac):
        q = [d[0] for d in devs]
        modes = [d[1] for d in devs]
        alpha = frac * len(devs)
        assume(alpha > 0 or any(m != 1 for m in modes))
        lt = np.array(long_term_weights(q).weights)
        ad = np.array(adaptive_weights(q, modes, alpha=alpha).weights)
        assert ad.min() >= 0 and ad.sum() == pytest.approx(1, abs=1e-12)
        crit = np.array(modes) == 1
        assert np.all(ad[crit] <= lt[crit] + 1e-12)
        assert np.all(ad[~crit] >= lt[~crit] - 1e-12)


def test_fixed_mode_time_term_exact(analysis_profile):
    for mode, kappa in ((1, 3), (2, 2), (3, 1)):
        plan = find_q_lim(analysis_profile, mode, 0.5, 100)
        assert abs(1.0 / plan.kappa_bar - 1.0 / kappa) <= 1e-15
