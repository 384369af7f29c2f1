"""Named verification checks tying every engine piece to an independent
reference: compensator martingales under both measures, density-process
normalization, measure-change price consistency, the closed-form moment
oracles, exact PIDE solutions, and agreement of the two reserve routes.

Each check reports the fraction of its error budget consumed (statistical
gates are 3 standard errors); the raw numbers live in the detail string.
Statistical checks are flaky-tolerant: one retry on a fresh sub-seed before
a failure counts.  The JSON report is byte-identical across runs of the same
config and seed (wall times appear only in the human-readable table).
"""

from __future__ import annotations

import hashlib
import json
import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import hawkes, pide, special, thiele
from .config import RunConfig
from .markov import endowment_guarantee, pure_endowment, term_insurance
from .measure import compute_c_l, lambda_cap
from .model import ModelParams, validate
from .payoff import constant, guarantee, linear
from .rng import derive_seed
from .sde import girsanov_cross_check, simulate

__all__ = ["Check", "VerificationReport", "run_verification"]

EXACT = "exact-identity"
CLOSED = "closed-form"
ORACLE = "independent-oracle"


@dataclass
class Check:
    """One named verification item.

    `value` is the fraction of the error budget consumed (pass iff <= the
    budget `tolerance`, normally 1); `detail` carries the raw numbers.
    """

    name: str
    kind: str
    detail: str
    value: float
    reference: float
    tolerance: float
    passed: bool
    retried: bool = False
    hard: bool = True
    wall_time: float = 0.0

    def to_dict(self) -> dict:
        # wall_time excluded on purpose: reports must be byte-identical
        return {
            "name": self.name,
            "kind": self.kind,
            "detail": self.detail,
            "value": self.value,
            "reference": self.reference,
            "tolerance": self.tolerance,
            "passed": self.passed,
            "retried": self.retried,
            "hard": self.hard,
        }


@dataclass
class VerificationReport:
    seed: int
    config_digest: str
    checks: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks if c.hard)

    def to_json(self) -> str:
        doc = {
            "seed": self.seed,
            "config_digest": self.config_digest,
            "passed": self.passed,
            "checks": [c.to_dict() for c in self.checks],
        }
        return json.dumps(doc, sort_keys=True, indent=2)

    def table(self) -> str:
        lines = [
            f"{'check':30s} {'kind':18s} {'budget used':>12s} {'ok':>3s} {'sec':>7s}  detail"
        ]
        for c in self.checks:
            lines.append(
                f"{c.name:30s} {c.kind:18s} {c.value:12.4g} "
                f"{'yes' if c.passed else 'NO':>3s} {c.wall_time:7.2f}"
                + ("  (retried)" if c.retried else "")
                + f"  {c.detail}"
            )
        lines.append(f"overall: {'PASS' if self.passed else 'FAIL'}")
        return "\n".join(lines)


def _ratio(deviation: float, gate: float) -> float:
    """Fraction of a (possibly zero) statistical gate consumed.

    A zero gate happens in degenerate regimes (for instance the intensity is
    deterministic without self-excitation); the deviation must then vanish.
    """
    if gate == 0.0:
        return 0.0 if deviation == 0.0 else math.inf
    return deviation / gate


class _Suite:
    def __init__(self, cfg: RunConfig):
        self.cfg = cfg
        self.checks: list[Check] = []
        self.scale = cfg.run.tolerances

    def add(self, name, kind, used, detail, *, retried=False, started=None):
        budget = float(self.scale.get(name, 1.0))
        self.checks.append(
            Check(
                name=name,
                kind=kind,
                detail=detail,
                value=float(used),
                reference=0.0,
                tolerance=budget,
                passed=bool(used <= budget),
                retried=retried,
                wall_time=time.perf_counter() - started if started else 0.0,
            )
        )

    def add_stat(self, name, kind, compute, *, started=None):
        """compute(tag) -> (budget_used, detail); retried once on failure."""
        used, detail = compute(0)
        retried = False
        if used > float(self.scale.get(name, 1.0)):
            used, detail = compute(1)
            retried = True
        self.add(name, kind, used, detail, retried=retried, started=started)

    def guard(self, name, kind, fn):
        """Run one check body; an exception becomes a recorded failure."""
        started = time.perf_counter()
        try:
            fn(started)
        except Exception as exc:  # checks must never abort the suite
            self.checks.append(
                Check(
                    name=name, kind=kind,
                    detail=f"raised {type(exc).__name__}: {exc}",
                    value=float("inf"), reference=0.0, tolerance=1.0, passed=False,
                    wall_time=time.perf_counter() - started,
                )
            )


def run_verification(cfg: RunConfig) -> VerificationReport:
    """Execute the full suite on the configured model; config problems raise,
    individual check failures are recorded and never abort.

    Check names map one-to-one onto the acceptance criteria, in order:
    hawkes_mean_law, compensator_p, compensator_q_weighted, rn_density,
    q_martingale_stock, closed_form_oracles, pide_exact_solutions,
    pide_vs_mc_guarantee, thiele_consistency, admissibility_c_l; the
    girsanov_price_crosscheck and lambda_cap_corner rows are additional.
    """
    model = cfg.validated_model()
    selection, adm = cfg.selection(model)  # inadmissible a aborts here
    dist = cfg.dist
    p = model.params
    run = cfg.run
    suite = _Suite(cfg)
    seed = run.seed
    g_level = p.S0 * math.exp(p.r * p.T)
    shared = {}

    # 1. event-process mean law against the first-moment equation
    def c_hawkes(t0):
        def attempt(tag):
            paths = hawkes.simulate_hawkes_batch(
                model, dist, run.paths, derive_seed(seed, f"hawkes{tag}") if tag else seed
            )
            shared["hawkes_paths"] = paths
            lam_t = np.array([hp.lambda_at(p.T) for hp in paths])
            _, el_ref = hawkes.mean_intensity_ode(model, p.T)
            se = lam_t.std(ddof=1) / math.sqrt(lam_t.size)
            used = _ratio(abs(lam_t.mean() - el_ref), 3 * se)
            return used, (
                f"mean lambda_T {lam_t.mean():.5f} vs {el_ref:.5f} (3se {3*se:.5f})"
            )

        suite.add_stat("hawkes_mean_law", ORACLE, attempt, started=t0)

    suite.guard("hawkes_mean_law", ORACLE, c_hawkes)

    # 2. compensated counting and compound processes have mean zero under P
    def c_comp_p(t0):
        def attempt(tag):
            paths = shared.get("hawkes_paths")
            if tag or paths is None:
                paths = hawkes.simulate_hawkes_batch(
                    model, dist, run.paths, derive_seed(seed, f"compp{tag}")
                )
            rows = hawkes.martingale_residual_test(paths, [p.T / 2, p.T], dist.mean)
            used = max(_ratio(abs(r.mean), 3 * r.se) for r in rows)
            detail = "; ".join(
                f"{r.process}@{r.t:g}: {r.mean:+.4f} (3se {3*r.se:.4f})" for r in rows
            )
            return used, detail

        suite.add_stat("compensator_p", ORACLE, attempt, started=t0)

    suite.guard("compensator_p", ORACLE, c_comp_p)

    # 3 + 4. joint P-simulation: weighted compensator and density moments
    def p_run(tag):
        return simulate(
            model, dist, "P", 2 * run.paths, run.steps,
            derive_seed(seed, f"prun{tag}") if tag else seed,
            selection=selection, probe_times=(p.T / 2, p.T), threads=run.threads,
        )

    def c_comp_q(t0):
        def attempt(tag):
            sim_p = shared.get("p_sim")
            if tag or sim_p is None:
                sim_p = p_run(tag)
                shared["p_sim"] = sim_p
            used, parts = 0.0, []
            for t, pr in sim_p.probes.items():
                w = pr["X"][: run.paths] * (pr["N"][: run.paths] - pr["comp_n"][: run.paths])
                se = w.std(ddof=1) / math.sqrt(w.size)
                used = max(used, _ratio(abs(w.mean()), 3 * se))
                parts.append(f"t={t:g}: {w.mean():+.4f} (3se {3*se:.4f})")
            return used, "; ".join(parts)

        suite.add_stat("compensator_q_weighted", ORACLE, attempt, started=t0)

    suite.guard("compensator_q_weighted", ORACLE, c_comp_q)

    def c_density(t0):
        def attempt(tag):
            sim_p = shared.get("p_sim")
            if tag or sim_p is None:
                sim_p = p_run(f"dens{tag}")
            x_t = sim_p.terminal["X"]
            half = x_t[: run.paths]
            se = half.std(ddof=1) / math.sqrt(half.size)
            used = _ratio(abs(half.mean() - 1.0), 3 * se)
            mom = 2.0 + selection.epsilon1
            m_half = float(np.mean(half**mom))
            m_full = float(np.mean(x_t**mom))
            change = abs(m_full - m_half) / m_half
            used = max(used, change / 0.05)
            return used, (
                f"E[X_T] {half.mean():.5f} (3se {3*se:.5f}); "
                f"E[X^{mom:g}] doubling change {change:.3%} (<5%)"
            )

        suite.add_stat("rn_density", ORACLE, attempt, started=t0)

    suite.guard("rn_density", ORACLE, c_density)

    # 5. martingale-measure property of the discounted stock
    def c_qmart(t0):
        def attempt(tag):
            sim_q = simulate(
                model, dist, "Q", run.paths, run.steps,
                derive_seed(seed, f"qmart{tag}"), selection=selection,
                threads=run.threads,
            )
            disc = math.exp(-p.r * p.T) * sim_q.terminal["S"]
            se = disc.std(ddof=1) / math.sqrt(disc.size)
            used = _ratio(abs(disc.mean() - p.S0), 3 * se)
            return used, f"E[e^-rT S_T] {disc.mean():.4f} vs {p.S0:g} (3se {3*se:.4f})"

        suite.add_stat("q_martingale_stock", ORACLE, attempt, started=t0)

    suite.guard("q_martingale_stock", ORACLE, c_qmart)

    # extra: density-weighted price under P vs tilted-measure price
    def c_cross(t0):
        def attempt(tag):
            rep = girsanov_cross_check(
                model, dist, selection,
                lambda s_t: math.exp(-p.r * p.T) * np.maximum(g_level, s_t),
                run.paths, derive_seed(seed, f"cross{tag}"), n_steps=run.steps,
            )
            used = _ratio(abs(rep.estimate_p - rep.estimate_q), 3 * rep.se_pooled)
            return used, (
                f"P-weighted {rep.estimate_p:.4f} vs Q {rep.estimate_q:.4f} "
                f"(3se pooled {3*rep.se_pooled:.4f})"
            )

        suite.add_stat("girsanov_price_crosscheck", ORACLE, attempt, started=t0)

    suite.guard("girsanov_price_crosscheck", ORACLE, c_cross)

    # 6. closed-form moment oracles vs Monte Carlo and series identities
    def c_oracles(t0):
        s_neg = 1.0
        val = special.cir_neg_moment(p.kappa, p.vbar, p.sigma, p.v0, p.T, s_neg)
        rng = np.random.default_rng(derive_seed(seed, "ncx2"))
        emkt = math.exp(-p.kappa * p.T)
        k_nc = 4 * p.kappa * p.v0 * emkt / (p.sigma**2 * -math.expm1(-p.kappa * p.T))
        delta = 4 * p.kappa * p.vbar / p.sigma**2
        samp = rng.noncentral_chisquare(delta, k_nc, size=1_000_000) * (emkt * p.v0 / k_nc)
        rel1 = abs(val / float(np.mean(1.0 / samp**s_neg)) - 1.0)
        c_exp = min(
            0.1, 0.4 * 0.5 * ((2 * p.kappa * p.vbar - p.sigma**2) / (2 * p.sigma)) ** 2
        )
        val2 = special.integrated_inverse_cir_exp(p.kappa, p.vbar, p.sigma, p.v0, p.T, c_exp)
        mc2 = _integrated_inverse_mc(p, c_exp, 20000, 512, derive_seed(seed, "iicir"))
        rel2 = abs(val2 / mc2 - 1.0)
        dev = _hyp1f1_identity_deviation()
        used = max(rel1 / 0.02, rel2 / 0.02, dev / 1e-9)
        suite.add(
            "closed_form_oracles", ORACLE, used,
            f"inverse moment rel {rel1:.3%} (<2%); integrated reciprocal rel "
            f"{rel2:.3%} (<2%); series identity dev {dev:.1e} (<1e-9)",
            started=t0,
        )

    suite.guard("closed_form_oracles", ORACLE, c_oracles)

    # 7. exact solutions of the pricing equation
    nt, nx, ny, nz = run.grid
    grid = pide.build_grid(model, p.T, nt, nx, ny, nz)

    def c_pide_exact(t0):
        sol_lin = pide.solve_price_pide(linear(1.0), p.T, model, selection, dist, grid)
        x3 = np.broadcast_to(grid.x[:, None, None], grid.shape)
        err_x = max(
            float(np.max(np.abs(sol_lin.values[k] / x3 - 1.0)))
            for k in range(len(grid.t))
        )
        sol_one = pide.solve_price_pide(constant(1.0), p.T, model, selection, dist, grid)
        disc = np.exp(-p.r * (p.T - grid.t))
        err_1 = max(
            float(np.max(np.abs(sol_one.values[k] / disc[k] - 1.0)))
            for k in range(len(grid.t))
        )
        used = max(err_x / 1e-3, err_1 / 1e-6)
        suite.add(
            "pide_exact_solutions", EXACT, used,
            f"payoff x rel err {err_x:.1e} (<1e-3); payoff 1 rel err {err_1:.1e} (<1e-6)",
            started=t0,
        )

    suite.guard("pide_exact_solutions", EXACT, c_pide_exact)

    # 8. guarantee price: solver vs tilted-measure estimator
    def c_pide_mc(t0):
        def attempt(tag):
            sol_g = pide.solve_price_pide(
                guarantee(g_level), p.T, model, selection, dist, grid
            )
            u0 = sol_g.at(0, p.S0, p.v0, p.lambda0)
            sim_q = simulate(
                model, dist, "Q", 2 * run.paths, run.steps,
                derive_seed(seed, f"pidemc{tag}"), selection=selection,
                threads=run.threads,
            )
            pay = math.exp(-p.r * p.T) * np.maximum(g_level, sim_q.terminal["S"])
            mc, se = float(pay.mean()), float(pay.std(ddof=1) / math.sqrt(pay.size))
            used = abs(u0 - mc) / (0.01 * mc + 3 * se)
            return used, (
                f"solver {u0:.4f} vs simulation {mc:.4f} +- {se:.4f} "
                f"(gate 1% + 3se = {0.01*mc + 3*se:.4f})"
            )

        suite.add_stat("pide_vs_mc_guarantee", ORACLE, attempt, started=t0)

    suite.guard("pide_vs_mc_guarantee", ORACLE, c_pide_mc)

    # 9. the two reserve routes agree; classical scalar reduction
    def c_thiele(t0):
        worst = _thiele_consistency_worst(model, selection, dist, grid, g_level)
        dev = _classical_reduction_deviation(p, dist, cfg)
        used = max(worst / 0.01, dev / 1e-4)
        suite.add(
            "thiele_consistency", ORACLE, used,
            f"worst probe rel diff {worst:.4%} (<1%); classical reduction "
            f"dev {dev:.1e} (<1e-4)",
            started=t0,
        )

    suite.guard("thiele_consistency", ORACLE, c_thiele)

    # 10. admissibility threshold and band nesting
    def c_adm(t0):
        used, detail = _c_l_consistency(model, dist, adm)
        suite.add("admissibility_c_l", CLOSED, used, detail, started=t0)

    suite.guard("admissibility_c_l", CLOSED, c_adm)

    # extra: continuity of the exponential-moment cap at its corner
    def c_corner(t0):
        corner = _lambda_corner_deviation(model)
        suite.add(
            "lambda_cap_corner", CLOSED, corner / 1e-6,
            f"relative gap to the analytic limit {corner:.1e} (<1e-6)",
            started=t0,
        )

    suite.guard("lambda_cap_corner", CLOSED, c_corner)

    digest = hashlib.sha256(cfg.canonical().encode()).hexdigest()[:16]
    return VerificationReport(seed=seed, config_digest=digest, checks=suite.checks)


def _integrated_inverse_mc(p, c, n_paths, n_steps, seed):
    """Exact-transition simulation of the jump-free variance with a
    trapezoidal integral of its reciprocal."""
    rng = np.random.default_rng(seed)
    dt = p.T / n_steps
    df = 4 * p.kappa * p.vbar / p.sigma**2
    ek = math.exp(-p.kappa * dt)
    cc = 4 * p.kappa / (p.sigma**2 * (1 - ek))
    v = np.full(n_paths, p.v0)
    integ = np.zeros(n_paths)
    for _ in range(n_steps):
        v_new = rng.noncentral_chisquare(df, cc * ek * v) / cc
        integ += 0.5 * (1.0 / v + 1.0 / v_new) * dt
        v = v_new
    return float(np.mean(np.exp(c * integ)))


def _hyp1f1_identity_deviation() -> float:
    dev = 0.0
    for a in (0.5, 1.0, 2.5):
        for b in (0.5, 1.5, 2.5):
            dev = max(dev, abs(special.hyp1f1(a, b, 0.0) - 1.0))
            for z in np.linspace(-20, 20, 9):
                lhs = special.hyp1f1(a, b, float(z))
                rhs = math.exp(z) * special.hyp1f1(b - a, b, float(-z))
                dev = max(dev, abs(lhs - rhs) / max(abs(lhs), 1e-30))
    for z in (-3.0, 0.7, 4.0):
        dev = max(dev, abs(special.hyp1f1(2.0, 2.0, z) - math.exp(z)) / math.exp(z))
    dev = max(dev, abs(special.hyp1f1(0.5, 1.5, -1.0) - 0.7468241328124271))
    return dev


def _thiele_consistency_worst(model, selection, dist, grid, g_level) -> float:
    p = model.params
    templates = [
        pure_endowment(p.T, 0.02),
        term_insurance(p.T, 0.02),
        endowment_guarantee(p.T, 0.02, g_level),
    ]
    nx, ny, nz = grid.shape
    probes = [
        (i, j, k)
        for i in (nx // 4, nx // 2, 3 * nx // 4)
        for j in (ny // 4, ny // 2, 3 * ny // 4)
        for k in (nz // 4, nz // 2, 3 * nz // 4)
    ]
    worst = 0.0
    for pol in templates:
        surf = thiele.solve_thiele_pide(pol, model, selection, dist, grid)
        quad = thiele.reserve_quadrature(pol, model, selection, dist, grid, 0.0)
        for st in pol.states:
            a_lay = surf.values[st][0]
            b_lay = quad.values[st]
            scale = max(float(np.max(np.abs(b_lay))), 1e-12)
            for i, j, k in probes:
                worst = max(worst, abs(a_lay[i, j, k] - b_lay[i, j, k]) / scale)
    return worst


def _classical_reduction_deviation(p, dist, cfg) -> float:
    """Ten-year x-independent term insurance vs the scalar closed form."""
    horizon, mu_rate = 10.0, 0.02
    long_model = validate(
        ModelParams(
            lambda0=p.lambda0, alpha=p.alpha, beta=p.beta, S0=p.S0, r=p.r,
            rho=p.rho, v0=p.v0, kappa=p.kappa, vbar=p.vbar, sigma=p.sigma,
            eta=p.eta, T=horizon, mu=p.mu,
        )
    )
    sel, _ = cfg.selection(long_model)
    pol = term_insurance(horizon, mu_rate)
    # the explicit jump relaxation needs dt below 1/z_max, and z_max grows
    # with the horizon, hence the large step count on this small grid
    grid = pide.build_grid(long_model, horizon, 1024, 12, 8, 4)
    surf = thiele.solve_thiele_pide(pol, long_model, sel, dist, grid)
    got = float(surf.values["alive"][0][0, 0, 0])
    closed = mu_rate / (p.r + mu_rate) * -math.expm1(-(p.r + mu_rate) * horizon)
    return abs(got - closed)


def _c_l_consistency(model, dist, adm) -> tuple[float, str]:
    p = model.params
    res = compute_c_l(model, dist)
    # local dense scan around the bisection value stands in for the global
    # million-point scan (the full version runs in the acceptance suite)
    grid = np.linspace(res.value * 0.999, min(adm.cap, res.value * 1.001), 2001)
    ok_pts = [c for c in grid if _cl_predicate(model, dist, c)]
    spacing = float(grid[1] - grid[0]) if len(grid) > 1 else 1.0
    dev_scan = abs((max(ok_pts) if ok_pts else 0.0) - res.value)
    eta0 = validate(
        ModelParams(
            lambda0=p.lambda0, alpha=p.alpha, beta=p.beta, S0=p.S0, r=p.r,
            rho=p.rho, v0=p.v0, kappa=p.kappa, vbar=p.vbar, sigma=p.sigma,
            eta=0.0, T=p.T, mu=p.mu,
        )
    )
    cap_exact = compute_c_l(eta0, dist).value == adm.cap
    nested = (
        adm.bound_em_qs <= adm.bound_em <= adm.bound_e
        if adm.bound_em_qs is not None
        else False
    )
    used = dev_scan / (spacing + 1e-10)
    if not cap_exact or not nested:
        used = max(used, math.inf)
    detail = (
        f"threshold {res.value:.10g}; scan gap {dev_scan:.1e} (<= spacing "
        f"{spacing:.1e}); zero-eta cap exact {cap_exact}; band nesting {nested}"
    )
    return used, detail


def _cl_predicate(model, dist, c) -> bool:
    lam = lambda_cap(model, c)
    if not lam < dist.epsilon_j:
        return False
    if model.alpha == 0:
        return True
    x = model.beta / model.alpha
    return dist.mgf(lam) <= x * math.exp(1.0 / x - 1.0)


def _lambda_corner_deviation(model) -> float:
    p = model.params
    cap = p.kappa**2 / (2 * p.sigma**2)
    d_small = 1e-8
    c_near = (p.kappa**2 - d_small**2) / (2 * p.sigma**2)
    limit = 2 * p.eta * cap * p.T / (2 + p.kappa * p.T)
    if limit == 0.0:
        return abs(lambda_cap(model, c_near))
    return (
        abs(lambda_cap(model, c_near) - 2 * p.eta * c_near * p.T / (2 + p.kappa * p.T))
        / limit
    )
