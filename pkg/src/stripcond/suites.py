"""Named verification suites for the command-line runner.

Suites are scaled-down versions of the acceptance checks (the heavy
full-size versions live in the test-suite); every random quantity draws
from batch-indexed streams, so reports are byte-identical across thread
counts.  Each suite returns a list of TestReports.
"""

from __future__ import annotations

import math

import numpy as np
from scipy import special

from . import (conditioning, ladderbox, lamperti, lastpassage, potential,
               stablelaw, verify)
from .models import (Family, RngStream, SubordinatorSpec, laplace_exponent,
                     sample_increments)
from .parallel import run_batches

_STREAMS = {
    "models": 11,
    "potential": 12,
    "conditioning": 13,
    "lamperti": 14,
    "lastpassage": 15,
    "ladderbox": 16,
}


def _n(base: int, cfg: dict) -> int:
    return max(int(base * cfg["suite"]["n_scale"]), 100)


def suite_models(seed: int, threads: int, cfg: dict):
    rng = RngStream(seed, _STREAMS["models"])
    reports = []
    # closed-form pins
    reports.append(verify.residual_report(
        laplace_exponent(SubordinatorSpec.stable(0.5), 4.0) - 2.0,
        cfg["thresholds"]["special_tol"], "stable exponent at lambda=4"))
    reports.append(verify.residual_report(
        laplace_exponent(SubordinatorSpec.poisson(1.0), math.log(2.0)) - 0.5,
        cfg["thresholds"]["special_tol"], "poisson exponent at ln 2"))
    # exact marginals: -(1/t) log mean(exp(-lam X_t)) vs the exponent
    specs = [SubordinatorSpec.drift(1.0), SubordinatorSpec.poisson(1.0),
             SubordinatorSpec.stable(0.5),
             SubordinatorSpec.gamma(1.0, 1.0),
             SubordinatorSpec.compound_poisson_drift(1.0, 1.0)]
    n = _n(20_000, cfg)
    n_batches = 8

    def one(spec, lam, t, key):
        def batch(i, gen):
            xs = sample_increments(spec, t, n // n_batches, gen)
            v = np.exp(-lam * xs)
            return v.sum(), (v * v).sum(), v.size

        parts = run_batches(batch, n_batches, rng.child(key), threads)
        s1 = sum(p[0] for p in parts)
        s2 = sum(p[1] for p in parts)
        m = sum(p[2] for p in parts)
        mean = s1 / m
        var = max(s2 / m - mean * mean, 0.0)
        est = -math.log(mean) / t
        target = laplace_exponent(spec, lam)
        if var < 1e-28:   # deterministic family: compare directly
            resid = abs(est - target)
            return verify.residual_report(
                resid, 1e-10, f"marginal {spec.family.value} lam={lam} t={t}")
        se = math.sqrt(var / m)
        z = (est - target) / (se / mean / t)
        return verify.TestReport(
            f"marginal {spec.family.value} lam={lam} t={t}", abs(z),
            bool(abs(z) <= cfg["thresholds"]["mc_sigma"]), n=m,
            meta={"estimate": est, "target": target})

    key = 0
    for spec in specs:
        for lam in (0.5, 2.0):
            key += 1
            reports.append(one(spec, lam, 1.0, key))
    # reproducibility: identical (seed, stream) across construction order
    a = RngStream(seed, 5).generator().standard_normal(8)
    b = RngStream(seed, 5).generator().standard_normal(8)
    reports.append(verify.TestReport("stream reproducibility",
                                     float(np.max(np.abs(a - b))),
                                     bool(np.array_equal(a, b))))
    return reports


def suite_potential(seed: int, threads: int, cfg: dict):
    rng = RngStream(seed, _STREAMS["potential"])
    inv = cfg["inversion"]
    reports = []
    grids = {
        SubordinatorSpec.drift(1.0): np.linspace(0.5, 5.0, 5),
        SubordinatorSpec.poisson(1.0): np.array([0.5, 1.3, 2.5, 3.7, 5.25]),
        SubordinatorSpec.stable(0.5): np.linspace(0.5, 4.0, 5),
    }
    n = _n(20_000, cfg)
    for k, (spec, xs) in enumerate(grids.items()):
        worst = 0.0
        for x in xs:
            cf = potential.potential_closed_form(spec, 0.0, float(x))
            nu = potential.potential_numeric(spec, 0.0, float(x),
                                             terms=inv["terms"],
                                             damping=inv["damping"])
            worst = max(worst, abs(nu / cf - 1.0))
        reports.append(verify.residual_report(
            worst, 1e-5, f"closed vs inversion {spec.family.value}"))
        x_mid = float(xs[len(xs) // 2])
        est = potential.potential_mc(spec, 0.0, x_mid, n, rng.child(k))
        cf = potential.potential_closed_form(spec, 0.0, x_mid)
        z = (est.estimate - cf) / max(est.std_error, 1e-300)
        reports.append(verify.TestReport(
            f"closed vs MC {spec.family.value} x={x_mid}", abs(z),
            bool(abs(z) <= cfg["thresholds"]["mc_sigma"]), n=n,
            meta={"mc": est.estimate, "closed": cf}))
    # monotone q -> 0 convergence on the stable family
    spec = SubordinatorSpec.stable(0.5)
    xs = np.linspace(0.5, 3.0, 6)
    sups = []
    for q in (1.0, 0.1, 0.01, 0.001):
        vals = np.array([potential.potential_numeric(spec, q, float(x))
                         for x in xs])
        u0 = np.array([potential.potential_closed_form(spec, 0.0, float(x))
                       for x in xs])
        sups.append(float(np.max(np.abs(vals - u0))))
    mono = all(sups[i + 1] <= sups[i] + 1e-12 for i in range(len(sups) - 1))
    reports.append(verify.TestReport("U_q -> U uniformly on compacts",
                                     sups[-1], bool(mono and sups[-1] < 0.05),
                                     meta={"sup_gaps": sups}))
    # renewal subadditivity on random pairs
    gen = rng.child(99).generator()
    ok = True
    for spec in (SubordinatorSpec.drift(2.0), SubordinatorSpec.poisson(1.0),
                 SubordinatorSpec.stable(0.7),
                 SubordinatorSpec.compound_poisson_drift(1.0, 1.0)):
        xs = gen.uniform(0.01, 4.0, (200, 2))
        u = lambda z: conditioning.renewal(spec, float(z))
        for x, y in xs:
            if u(x + y) > u(x) + u(y) + 1e-9:
                ok = False
    reports.append(verify.TestReport("renewal subadditivity", 0.0, ok))
    return reports


def suite_conditioning(seed: int, threads: int, cfg: dict):
    rng = RngStream(seed, _STREAMS["conditioning"])
    reports = []
    n = _n(20_000, cfg)
    # killing level uniform for the lattice strip
    for a in (2, 3):
        law = conditioning.StripLaw(SubordinatorSpec.poisson(1.0), float(a))
        levels = conditioning.sample_terminal_batch(law, n, rng.child(a))
        counts = np.bincount(levels.astype(int), minlength=a + 1)
        expected = np.full(a + 1, n / (a + 1))
        stat = float(np.sum((counts - expected) ** 2 / expected))
        from scipy import stats as sstats
        p = float(sstats.chi2.sf(stat, a))
        reports.append(verify.TestReport(f"poisson killing level a={a}", stat,
                                         bool(p > cfg["thresholds"]["p_min"]),
                                         p_value=p, n=n))
    # stable terminal law
    alpha = 0.5
    law = conditioning.StripLaw(SubordinatorSpec.stable(alpha), 1.0)
    term = conditioning.sample_terminal_batch(law, n, rng.child(7))
    reports.append(verify.ks_test(term, lambda y: np.clip(y, 0, 1) ** alpha,
                                  name="stable terminal CDF y^alpha"))
    # supermartingale audit
    reports.extend(conditioning.check_supermartingale(
        SubordinatorSpec.stable(0.5), 1.0, (0.1, 0.5, 1.0), n, rng.child(8)))
    # killing-limit extrapolation, Poisson and drift
    for key, (tag, spec, a, event, exact) in enumerate((
        ("poisson", SubordinatorSpec.poisson(1.0), 3.0,
         conditioning.event_first_passage(1.0), 1.0 - 2.0 / 4.0),
        ("drift", SubordinatorSpec.drift(1.0), 1.0,
         conditioning.event_state_at(0.4, lambda v: v <= 0.5), 0.6),
    )):
        law = conditioning.StripLaw(spec, a)
        res = conditioning.verify_killing_limit(
            law, event, (1.0, 0.3, 0.1, 0.03), _n(20_000, cfg),
            rng.child(20 + key), t_hint=1.0)
        err = abs(res.extrapolated - exact)
        reports.append(verify.TestReport(
            f"killing limit {tag}", err, bool(err <= 0.01),
            meta={"extrapolated": res.extrapolated, "exact": exact,
                  "per_q": list(map(float, res.estimates))}))
    return reports


def suite_lamperti(seed: int, threads: int, cfg: dict):
    rng = RngStream(seed, _STREAMS["lamperti"])
    tol = cfg["thresholds"]["special_tol"]
    reports = []
    worst = 0.0
    for alpha in np.arange(0.1, 0.95, 0.1):
        worst = max(
            worst,
            abs(lamperti.phi_xi(alpha - 1.0, alpha)),
            abs(lamperti.phi_circ(0.0, alpha)),
            abs(lamperti.phi_xi(0.0, alpha) - 1.0 / special.gamma(1.0 - alpha)),
            abs(lamperti.phi_down(0.0, alpha) - special.gamma(1.0 + alpha)),
            abs(lamperti.phi_xi(0.0, alpha) * special.gamma(1.0 - alpha) - 1.0),
        )
    reports.append(verify.residual_report(worst, tol, "exact exponent identities"))
    # undershoot law
    n = _n(20_000, cfg)
    alpha = 0.5
    us = lamperti.undershoot_samples(alpha, 1.0, n, 1e-3,
                                     rng.child(1).generator())
    reports.append(verify.ks_test(
        us, lambda y: lamperti.undershoot_cdf(y, alpha),
        name="undershoot arcsine law"))
    # empirical exponent of extracted xi
    xi = lamperti.xi_at_clock_batch(alpha, [1.0], _n(6000, cfg), 5e-4,
                                    rng.child(2).generator())[0]
    for lam in (0.25, 0.5, 1.0):
        v = np.where(np.isfinite(xi), np.exp(lam * xi), 0.0)
        est = -math.log(v.mean())
        se = v.std(ddof=1) / math.sqrt(v.size) / v.mean()
        z = (est - lamperti.phi_xi(lam, alpha)) / se
        reports.append(verify.TestReport(
            f"xi exponent lam={lam}", abs(float(z)),
            bool(abs(z) <= cfg["thresholds"]["mc_sigma"]), n=int(v.size),
            meta={"estimate": float(est),
                  "target": float(lamperti.phi_xi(lam, alpha))}))
    # circ martingale mass
    _, _, wm, wse = lamperti.circ_weighted_moments(alpha, [0.5], 0.7,
                                                   _n(8000, cfg), 5e-4,
                                                   rng.child(3).generator())
    z = (wm - 1.0) / wse
    reports.append(verify.TestReport("circ tilt conserves mass", abs(float(z)),
                                     bool(abs(z) <= cfg["thresholds"]["mc_sigma"]),
                                     meta={"mass": wm, "se": wse}))
    return reports


def suite_lastpassage(seed: int, threads: int, cfg: dict):
    rng = RngStream(seed, _STREAMS["lastpassage"])
    tol = cfg["thresholds"]["linalg_tol"]
    reports = []
    chains = {name: mk() for name, mk in lastpassage.BUNDLED_CHAINS.items()}
    worst16, worstg = 0.0, 0.0
    for name, ch in chains.items():
        x = min(1, ch.n_states - 1)
        for q in (0.1, 1.0, 10.0):
            for t in (0.1, 1.0):
                worst16 = max(worst16, abs(
                    lastpassage.check_excessive_identity(ch, x, q, t)))
            worstg = max(worstg, abs(
                lastpassage.g_window_identity_residual(ch, x, 0.8, q)))
    reports.append(verify.residual_report(worst16, tol, "excessiveness identity"))
    reports.append(verify.residual_report(worstg, tol, "last-zero window identity"))
    # h extrapolation consistency and assumption audit
    ch = chains["two_state"]
    qs = np.array([0.1, 0.01, 0.001])
    hqs = [lastpassage.h_q_exact(ch, 1, q) for q in qs]
    lim, err = verify.extrapolate_q(qs, hqs)
    reports.append(verify.residual_report(lim - lastpassage.h_limit(ch, 1),
                                          1e-4, "h_q extrapolates to h"))
    law = lastpassage.LastPassageLaw(chains["birth_death"], a=2.0)
    reports.append(verify.TestReport("assumptions (A)/(B) audit", 0.0,
                                     law.audit_assumptions()))
    # conditioned sampler: g law and marginal
    n = _n(10_000, cfg)
    law2 = lastpassage.LastPassageLaw(chains["two_state"], a=1.0)
    batch = lastpassage.sample_conditioned_batch(law2, n, rng.child(1),
                                                 record_t=0.5)
    reports.append(verify.ks_test(
        batch["g"],
        lambda t: np.array([lastpassage.g_infinity_cdf(law2, float(ti))
                            for ti in np.atleast_1d(t)]),
        name="g_inf law under conditioning"))
    sel = batch["record_state"][batch["g"] > 0.5]
    emp = np.bincount(sel, minlength=2) / max(sel.size, 1)
    tv = 0.5 * float(np.abs(emp - lastpassage.conditioned_marginal(law2, 0.5)).sum())
    reports.append(verify.TestReport("conditioned marginal at a/2", tv,
                                     bool(tv < 0.02), n=int(sel.size)))
    # overshoot consistency
    spec = SubordinatorSpec.compound_poisson_drift(1.0, 1.0)
    gs = lastpassage.overshoot_last_zero_samples(spec, 1.0, 0.05,
                                                 _n(5000, cfg), rng.child(2))
    term = conditioning.sample_terminal_batch(
        conditioning.StripLaw(spec, 1.0), _n(5000, cfg), rng.child(3))
    reports.append(verify.ks_two_sample(gs, term,
                                        name="overshoot last zero vs strip terminal"))
    return reports


def suite_ladderbox(seed: int, threads: int, cfg: dict):
    rng = RngStream(seed, _STREAMS["ladderbox"])
    reports = []
    law = ladderbox.LadderBoxLaw(1.0, 1.0)
    inf_law = ladderbox.LadderBoxLaw(1.0, math.inf)
    reports.append(verify.residual_report(
        ladderbox.V_box(inf_law) - math.sqrt(2.0 / math.pi), 1e-8,
        "V(b=inf) = sqrt(2a/pi)"))
    n = _n(20_000, cfg)
    reports.append(ladderbox.h_s_identity_mc(law, 0.8, 0.4, n, rng.child(1),
                                             dt=0.01))
    ss, yy = ladderbox.sample_box_joint(law, _n(10_000, cfg), rng.child(2),
                                        dt=1e-3)
    reports.append(verify.chi_square_grid(
        np.column_stack([ss, yy]), None, np.linspace(0, 1, 7),
        np.linspace(0, 1, 7), name="box joint law",
        cell_mass=ladderbox.box_cell_mass(law, 0.0)))
    rows = ladderbox.verify_box_limit(law, [0.5], _n(6000, cfg), rng.child(3),
                                      dt=2e-3)
    r = rows[0]
    z = abs(r.ratio - 1.0) / max(r.ratio_se, 1e-300)
    reports.append(verify.TestReport("box limit ratio", float(z),
                                     bool(z <= cfg["thresholds"]["mc_sigma"]),
                                     meta={"ratio": r.ratio, "se": r.ratio_se}))
    reports.append(r.joint_chi2)
    if r.post_ks is not None:
        reports.append(r.post_ks)
    # Bessel(3) marginal: one-shot norm construction against the density
    gen = rng.child(4).generator()
    vals = np.linalg.norm(gen.standard_normal((n, 3)), axis=1)
    reports.append(verify.ks_test(vals, lambda z_: ladderbox.bessel3_cdf(z_, 1.0),
                                  name="Bessel(3) marginal at t=1"))
    return reports


SUITES = {
    "models": suite_models,
    "potential": suite_potential,
    "conditioning": suite_conditioning,
    "lamperti": suite_lamperti,
    "lastpassage": suite_lastpassage,
    "ladderbox": suite_ladderbox,
}


def run_suite(name: str, seed: int, threads: int, cfg: dict):
    if name == "all":
        out = {}
        for key in SUITES:
            out[key] = SUITES[key](seed, threads, cfg)
        return out
    if name not in SUITES:
        raise KeyError(name)
    return {name: SUITES[name](seed, threads, cfg)}
