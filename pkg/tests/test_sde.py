import math

import numpy as np
import pytest
from scipy.integrate import solve_ivp

from hhr import hawkes, measure, model, sde
from hhr.errors import AdmissibilityError, EventOverflow

from conftest import desk_params


def _mk(**kw):
    return model.validate(desk_params(**kw))


DIST = model.ExponentialJump(2.0)


def _sel(m, fraction=0.8):
    sel, _ = measure.select_measure(m, DIST, fraction=fraction)
    return sel


class TestInterface:
    def test_minimum_steps_enforced(self, desk_model, desk_selection):
        with pytest.raises(ValueError):
            sde.simulate(desk_model, DIST, "P", 4, 10, 1)

    def test_q_requires_selection(self, desk_model):
        with pytest.raises(AdmissibilityError):
            sde.simulate(desk_model, DIST, "Q", 4, 64, 1)

    def test_probe_time_must_sit_on_grid(self, desk_model, desk_selection):
        with pytest.raises(ValueError):
            sde.simulate(
                desk_model, DIST, "P", 4, 64, 1,
                selection=desk_selection, probe_times=(0.123456,),
            )


class TestDeterministicVariance:
    def test_matches_linear_ode(self):
        # no jumps and no vol-of-vol: v follows dv = -kappa (v - vbar) dt
        m = _mk(eta=0.0, sigma=0.0)
        res = sde.simulate(m, DIST, "P", 8, 10_000, 3, record_full=True)
        for b in res.bundles:
            exact = m.vbar + (m.v0 - m.vbar) * np.exp(-m.kappa * b.time_grid)
            assert np.max(np.abs(b.v / exact - 1.0)) < 1e-3


class TestJumpBookkeeping:
    def test_jumps_applied_exactly_at_event_times(self, desk_model, desk_selection):
        res = sde.simulate(
            desk_model, DIST, "P", 256, 64, 17,
            selection=desk_selection, record_events=True,
        )
        ev = res.events
        assert ev["time"].size > 0
        dv = ev["v_after"] - ev["v_before"]
        assert np.allclose(dv, desk_model.eta * ev["mark"], rtol=0, atol=1e-15)
        dl = ev["lam_after"] - ev["lam_before"]
        assert np.allclose(dl, desk_model.alpha, rtol=0, atol=1e-15)

    def test_counts_match_bundles(self, desk_model, desk_selection):
        res = sde.simulate(
            desk_model, DIST, "P", 16, 64, 21,
            selection=desk_selection, record_full=True,
        )
        for b in res.bundles:
            assert b.N[-1] == b.event_times.size
            assert b.L[-1] == pytest.approx(b.marks.sum())
            assert np.all(np.diff(b.N) >= 0)
            assert np.all(b.lam >= desk_model.lambda0 - 1e-12)
            assert np.all(b.v >= 0)
            assert np.all(b.S > 0)
            assert b.X[0] == 1.0
            assert np.all(b.X > 0)


class TestDensityProcess:
    def test_mean_one_at_horizon(self, desk_model, desk_selection):
        res = sde.simulate(
            desk_model, DIST, "P", 20_000, 128, 29, selection=desk_selection
        )
        x = res.terminal["X"]
        se = x.std(ddof=1) / math.sqrt(x.size)
        assert abs(x.mean() - 1.0) < 3 * se

    def test_weighted_compensator_zero_mean(self, desk_model, desk_selection):
        res = sde.simulate(
            desk_model, DIST, "P", 20_000, 128, 31,
            selection=desk_selection, probe_times=(0.5, 1.0),
        )
        for t, pr in res.probes.items():
            w = pr["X"] * (pr["N"] - pr["comp_n"])
            se = w.std(ddof=1) / math.sqrt(w.size)
            assert abs(w.mean()) < 3 * se


class TestMartingaleMeasure:
    def test_discounted_stock_mean(self, desk_model, desk_selection):
        res = sde.simulate(
            desk_model, DIST, "Q", 20_000, 128, 37, selection=desk_selection
        )
        disc = math.exp(-desk_model.r * desk_model.T) * res.terminal["S"]
        se = disc.std(ddof=1) / math.sqrt(disc.size)
        assert abs(disc.mean() - desk_model.S0) < 3 * se

    def test_bias_within_noise_when_steps_double(self, desk_model, desk_selection):
        # the log-Euler update prices the discounted stock without bias, so
        # both step counts must sit inside their own Monte Carlo bands
        errs = {}
        for n_steps in (64, 128):
            res = sde.simulate(
                desk_model, DIST, "Q", 20_000, n_steps, 41, selection=desk_selection
            )
            disc = math.exp(-desk_model.r * desk_model.T) * res.terminal["S"]
            se = disc.std(ddof=1) / math.sqrt(disc.size)
            errs[n_steps] = (abs(disc.mean() - desk_model.S0), se)
        for err, se in errs.values():
            assert err < 3 * se
        assert errs[128][0] <= errs[64][0] + 3 * math.hypot(errs[64][1], errs[128][1])


class TestIntegratedVariance:
    def test_matches_first_moment_equation(self, desk_model, desk_selection):
        m = desk_model
        res = sde.simulate(m, DIST, "P", 20_000, 256, 43, selection=desk_selection)
        iv = res.terminal["int_v"]

        def rhs(t, y):
            ev, integral = y
            el = float(hawkes.expected_intensity(m, t))
            return [-m.kappa * (ev - m.vbar) + m.eta * DIST.mean * el, ev]

        sol = solve_ivp(rhs, (0, m.T), [m.v0, 0.0], rtol=1e-10, atol=1e-12)
        ref = sol.y[1, -1]
        se = iv.std(ddof=1) / math.sqrt(iv.size)
        assert abs(iv.mean() - ref) < 3 * se

    def test_truncation_stays_rare(self, desk_model, desk_selection):
        res = sde.simulate(
            desk_model, DIST, "P", 4_000, 1_000, 47, selection=desk_selection
        )
        assert res.truncated_fraction < 0.01


class TestGirsanovCrossCheck:
    def test_unit_payoff(self, desk_model, desk_selection):
        rep = sde.girsanov_cross_check(
            desk_model, DIST, desk_selection, lambda s: np.ones_like(s), 5_000, 51
        )
        assert rep.estimate_q == 1.0
        assert abs(rep.estimate_p - 1.0) < 3 * rep.se_p
        assert not rep.flagged

    def test_discounted_linear_payoff(self, desk_model, desk_selection):
        m = desk_model
        disc = math.exp(-m.r * m.T)
        rep = sde.girsanov_cross_check(
            m, DIST, desk_selection, lambda s: disc * s, 20_000, 53
        )
        assert abs(rep.estimate_p - m.S0) < 3 * rep.se_p
        assert abs(rep.estimate_q - m.S0) < 3 * rep.se_q
        assert not rep.flagged

    def test_guarantee_payoff_consistency(self, desk_model, desk_selection):
        m = desk_model
        g = m.S0 * math.exp(m.r * m.T)
        disc = math.exp(-m.r * m.T)
        rep = sde.girsanov_cross_check(
            m, DIST, desk_selection, lambda s: disc * np.maximum(g, s), 20_000, 57
        )
        assert abs(rep.estimate_p - rep.estimate_q) <= 3 * rep.se_pooled


class TestReproducibility:
    def test_identical_across_chunking_and_threads(self, desk_model, desk_selection):
        kw = dict(selection=desk_selection, probe_times=(1.0,))
        a = sde.simulate(desk_model, DIST, "P", 600, 64, 61, chunk_size=128, **kw)
        b = sde.simulate(desk_model, DIST, "P", 600, 64, 61, chunk_size=250, **kw)
        c = sde.simulate(
            desk_model, DIST, "P", 600, 64, 61, chunk_size=128, threads=4, **kw
        )
        for key in a.terminal:
            assert np.array_equal(a.terminal[key], b.terminal[key])
            assert np.array_equal(a.terminal[key], c.terminal[key])
        assert np.array_equal(a.probes[1.0]["comp_n"], b.probes[1.0]["comp_n"])

    def test_seed_changes_results(self, desk_model, desk_selection):
        a = sde.simulate(desk_model, DIST, "P", 64, 64, 1, selection=desk_selection)
        b = sde.simulate(desk_model, DIST, "P", 64, 64, 2, selection=desk_selection)
        assert not np.array_equal(a.terminal["S"], b.terminal["S"])


class TestTiltedVarianceConsistency:
    def test_variance_functionals_agree_across_measures(self, desk_model, desk_selection):
        # the tilted reversion (kappa + a sigma, kappa vbar/(kappa + a sigma))
        # must match the density's a*sqrt(v)*dW term: variance functionals
        # isolate this in a way stock functionals cannot
        m = desk_model
        sp = sde.simulate(m, DIST, "P", 30_000, 128, 311, selection=desk_selection)
        sq = sde.simulate(m, DIST, "Q", 30_000, 128, 312, selection=desk_selection)
        x = sp.terminal["X"]
        for key, f in (("v", lambda v: v), ("v", lambda v: np.exp(-3 * v)),
                       ("int_v", lambda v: v), ("N", lambda v: v)):
            wp = x * f(sp.terminal[key])
            wq = f(sq.terminal[key])
            se = math.hypot(
                wp.std(ddof=1) / math.sqrt(wp.size),
                wq.std(ddof=1) / math.sqrt(wq.size),
            )
            assert abs(wp.mean() - wq.mean()) < 3 * se


class TestNegativeTilt:
    def test_martingale_holds_for_negative_a(self, desk_model):
        sel, _ = measure.select_measure(desk_model, DIST, fraction=-0.8)
        assert sel.a < 0
        res = sde.simulate(desk_model, DIST, "Q", 20_000, 128, 71, selection=sel)
        disc = math.exp(-desk_model.r * desk_model.T) * res.terminal["S"]
        se = disc.std(ddof=1) / math.sqrt(disc.size)
        assert abs(disc.mean() - desk_model.S0) < 3 * se


class TestEventCap:
    def test_overflow_propagates(self, desk_selection):
        m = _mk(lambda0=50.0)
        with pytest.raises(EventOverflow):
            sde.simulate(
                m, DIST, "P", 8, 64, 5, selection=desk_selection, max_events=3
            )


class TestAntithetic:
    def test_pairing(self, desk_model, desk_selection):
        res = sde.simulate(
            desk_model, DIST, "Q", 2_000, 64, 67,
            selection=desk_selection, antithetic=True,
        )
        assert res.n_paths == 4_000
        assert res.terminal["S"].size == 4_000
        pairs = res.pair_view("S")
        assert pairs.size == 2_000
        # antithetic halves share the jump history
        assert np.array_equal(res.terminal["N"][:2_000], res.terminal["N"][2_000:])
        disc = math.exp(-desk_model.r * desk_model.T) * pairs
        se = disc.std(ddof=1) / math.sqrt(disc.size)
        assert abs(disc.mean() - desk_model.S0) < 3 * se
