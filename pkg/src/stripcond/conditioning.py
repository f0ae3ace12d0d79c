"""Conditioning a subordinator to stay in the strip [0, a], or to be
continuously absorbed at a point.

The strip law reweights paths by U(a - X_t)/U(a - x0) on {X_t < a} (the
renewal-function supermartingale); it is equivalently realised by drawing
the terminal value U-uniformly on the strip and then conditioning the
subordinator to hit that point.  The hit law reweights by the potential
density, u(y - X_t)/u(y - x0) on {X_t <= y}.

Exact (unweighted, killed) hit paths exist for three mechanisms:

* drift: deterministic absorption,
* lattice (unit-jump Poisson): run to the target level, kill at the next
  attempted jump (so the pre-kill value sits at the level, matching the
  uniformly-chosen-killing-level picture),
* stable: the self-similar chain of `stablelaw` (the Esscher-tilted
  Lamperti picture realised step by step); every step's transition kernel
  is sampled exactly.

Other density families get the importance-weighted representation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.optimize import brentq

from . import potential, stablelaw, verify
from .errors import DegenerateConditioningError, DomainError, UnsupportedModeError
from .models import (Family, PathSample, RngStream, SubordinatorSpec,
                     first_passage_time, sample_increments, sample_path)


@dataclass(frozen=True)
class StripLaw:
    """Subordinator conditioned to stay in [0, a], started at x0."""

    spec: SubordinatorSpec
    a: float
    x0: float = 0.0

    def __post_init__(self):
        if not (0.0 <= self.x0 < self.a):
            raise DomainError("need 0 <= x0 < a")
        if renewal(self.spec, self.a - self.x0) <= 0.0:
            raise DegenerateConditioningError("U(a - x0) must be positive")


@dataclass(frozen=True)
class HitLaw:
    """Subordinator conditioned to be continuously absorbed at y, from x0."""

    spec: SubordinatorSpec
    y: float
    x0: float = 0.0

    def __post_init__(self):
        if not (0.0 <= self.x0 < self.y):
            raise DomainError("need 0 <= x0 < y")
        if self.spec.lattice:
            gap = self.y - self.x0
            if abs(gap - round(gap)) > 1e-9:
                raise DomainError("lattice hit target must be a lattice point")
        elif not self.spec.has_potential_density:
            raise DomainError(
                "hit law needs a potential density or a lattice family")
        elif potential.potential_density(self.spec, self.y - self.x0) <= 0.0:
            raise DegenerateConditioningError("u(y - x0) must be positive")


def renewal(spec: SubordinatorSpec, z) -> np.ndarray | float:
    """U(z), best available route, scalar-friendly."""
    out = potential.renewal_function(spec, z)
    return float(out[0]) if np.isscalar(z) else out


# ---------------------------------------------------------------------------
# weights and the terminal law
# ---------------------------------------------------------------------------

def weight_strip(law: StripLaw, path: PathSample, t: float) -> float:
    """U(a - X_t)/U(a - x0) on {X_t < a}, else 0.

    Uses the strict barrier indicator; for lattice families the conditioned
    law additionally carries the U({0}) atom on {X_t = a}, which this weight
    deliberately omits (kept strict on purpose), so lattice importance
    estimates of functionals charging {X_t = a} are compared against the
    decomposition sampler, not against this weight.
    """
    if t > path.horizon + 1e-12:
        raise DomainError("t beyond the simulated horizon")
    if path.killed and t >= path.lifetime:
        return 0.0
    x_t = path.value_at(t)
    if x_t >= law.a:
        return 0.0
    return renewal(law.spec, law.a - x_t) / renewal(law.spec, law.a - law.x0)


def weight_hit(law: HitLaw, path: PathSample, t: float) -> float:
    """u(y - X_t)/u(y - x0) on {X_t <= y}, else 0 (density families)."""
    if path.killed and t >= path.lifetime:
        return 0.0
    x_t = path.value_at(t)
    if x_t > law.y:
        return 0.0
    num = potential.potential_density(law.spec, max(law.y - x_t, 1e-300))
    den = potential.potential_density(law.spec, law.y - law.x0)
    return num / den


def terminal_cdf(law: StripLaw, y: float) -> float:
    """P(terminal value <= y) = U(y - x0)/U(a - x0), for x0 <= y <= a."""
    if y < law.x0 - 1e-12 or y > law.a + 1e-12:
        raise DomainError("y must lie in [x0, a]")
    y = min(max(y, law.x0), law.a)
    return renewal(law.spec, y - law.x0) / renewal(law.spec, law.a - law.x0)


def sample_terminal(law: StripLaw, gen: np.random.Generator,
                    size: Optional[int] = None) -> np.ndarray | float:
    """Draw the terminal value: U-uniform on the strip.

    Lattice families place equal mass on each reachable level including the
    endpoint; density families invert the terminal distribution function.
    """
    n = 1 if size is None else size
    spec, a, x0 = law.spec, law.a, law.x0
    if spec.lattice:
        top = math.floor(a - x0)
        out = x0 + gen.integers(0, top + 1, n).astype(float)
    elif spec.family is Family.DRIFT:
        out = x0 + (a - x0) * gen.random(n)
    elif spec.family is Family.STABLE:
        out = x0 + (a - x0) * gen.random(n) ** (1.0 / spec.alpha)
    else:
        u_total = renewal(spec, a - x0)
        vs = gen.random(n) * u_total
        out = np.array([x0 + _inverse_renewal(spec, v, a - x0) for v in vs])
    return float(out[0]) if size is None else out


def _inverse_renewal(spec: SubordinatorSpec, v: float, zmax: float) -> float:
    f = lambda z: renewal(spec, z) - v
    if f(zmax) < 0:
        return zmax
    return brentq(f, 0.0, zmax, xtol=1e-12 * max(zmax, 1.0))


# ---------------------------------------------------------------------------
# samplers
# ---------------------------------------------------------------------------

def sample_hit(law: HitLaw, rng, *, dt: float = 1e-3,
               horizon: Optional[float] = None) -> PathSample:
    """One trajectory of the hit law.

    Exact killed paths for drift, lattice, and stable mechanisms; the other
    density families return an unkilled path carrying the importance weight
    evaluated at ``horizon`` (which they require).
    """
    gen = rng.generator() if isinstance(rng, RngStream) else rng
    spec, y, x0 = law.spec, law.y, law.x0
    if spec.family is Family.DRIFT:
        zeta = (y - x0) / spec.kappa
        return PathSample(np.array([0.0, zeta]), np.array([x0, y]),
                          lifetime=zeta, killed=True, drift=spec.kappa)
    if spec.lattice:
        return _sample_hit_lattice(spec, y, x0, gen)
    if spec.family is Family.STABLE:
        from . import lamperti
        times, dists, zeta = lamperti.sample_hit_pssmp(spec.alpha, y - x0, dt, gen)
        ts = np.concatenate([times, [zeta]]) if zeta > times[-1] else times
        vs = y - np.concatenate([dists, [0.0]]) if zeta > times[-1] \
            else y - np.concatenate([dists[:-1], [0.0]])
        return PathSample(ts, vs, lifetime=float(ts[-1]), killed=True)
    if horizon is None:
        raise DomainError("weighted hit sampling needs an evaluation horizon")
    path = sample_path(spec, horizon, "grid" if not spec.finite_activity
                       else "jump_exact", gen, dt=dt, x0=x0)
    w = weight_hit(law, path, horizon)
    return PathSample(path.times, path.values, weight=w, drift=path.drift)


def _sample_hit_lattice(spec, y, x0, gen) -> PathSample:
    levels = int(round(y - x0))
    rate = spec.jump_rate
    waits = gen.standard_exponential(levels + 1) / rate
    times = np.concatenate([[0.0], np.cumsum(waits)])
    values = x0 + np.minimum(np.arange(levels + 2), levels).astype(float)
    # the final recorded point is the attempted jump past y, where the path
    # is killed still sitting at y
    return PathSample(times, values, lifetime=float(times[-1]), killed=True)


def sample_strip(law: StripLaw, method: str, rng, *, dt: float = 1e-3,
                 horizon: Optional[float] = None) -> PathSample:
    """One trajectory of the strip law.

    "importance_weight" returns an unkilled path with the strip weight
    attached at ``horizon``.  "path_decomposition" draws the terminal value
    U-uniformly and delegates to the hit sampler; for drift, lattice and
    stable mechanisms the result is an exactly conditioned killed path.
    """
    gen = rng.generator() if isinstance(rng, RngStream) else rng
    spec = law.spec
    if method == "importance_weight":
        if horizon is None:
            raise DomainError("importance_weight needs an evaluation horizon")
        mode = "jump_exact" if spec.finite_activity else "grid"
        path = sample_path(spec, horizon, mode, gen, dt=dt, x0=law.x0)
        w = weight_strip(law, path, horizon)
        return PathSample(path.times, path.values, weight=w, drift=path.drift)
    if method == "path_decomposition":
        if not (spec.has_potential_density or spec.lattice):
            raise UnsupportedModeError(
                "path decomposition needs a potential density or lattice family")
        y = float(sample_terminal(law, gen))
        if spec.lattice and abs(y - law.x0) < 1e-12:
            # killed while still at the starting level: wait one holding time
            zeta = gen.standard_exponential() / spec.jump_rate
            return PathSample(np.array([0.0, zeta]),
                              np.array([law.x0, law.x0]),
                              lifetime=zeta, killed=True)
        if y <= law.x0:
            # zero-length density draw (measure zero); absorb immediately
            return PathSample(np.array([0.0]), np.array([law.x0]),
                              lifetime=0.0, killed=True)
        hit = HitLaw(spec, y, law.x0)
        return sample_hit(hit, gen, dt=dt, horizon=horizon)
    raise UnsupportedModeError(f"unknown strip sampling method {method!r}")


def sample_terminal_batch(law: StripLaw, n: int, rng) -> np.ndarray:
    """Vector of terminal values (the killing levels of the decomposition)."""
    gen = rng.generator() if isinstance(rng, RngStream) else rng
    return np.asarray(sample_terminal(law, gen, size=n))


# ---------------------------------------------------------------------------
# supermartingale audit
# ---------------------------------------------------------------------------

def check_supermartingale(spec: SubordinatorSpec, a: float, t_grid,
                          n_paths: int, rng, use_density: bool = False,
                          x0: float = 0.0) -> list:
    """Empirical decrease of E[U(a - X_t); X_t < a] (or the density variant).

    Exploits exact marginal sampling at each t.  Returns one TestReport per
    grid time for the bound, plus one for monotonicity in t.
    """
    gen = rng.generator() if isinstance(rng, RngStream) else rng
    if use_density and not spec.has_potential_density:
        raise DomainError("density variant needs (DA)")
    bound = (potential.potential_density(spec, a - x0) if use_density
             else renewal(spec, a - x0))
    reports = []
    means, ses = [], []
    for t in t_grid:
        xs = x0 + sample_increments(spec, float(t), n_paths, gen)
        if use_density:
            vals = np.where(xs < a,
                            _density_vec(spec, np.maximum(a - xs, 1e-300)), 0.0)
        else:
            vals = np.where(xs < a, _renewal_vec(spec, np.maximum(a - xs, 0.0)), 0.0)
        m = vals.mean()
        se = vals.std(ddof=1) / math.sqrt(n_paths)
        means.append(m)
        ses.append(se)
        reports.append(verify.TestReport(
            f"supermartingale bound t={t}", float((m - bound) / max(se, 1e-300)),
            bool(m <= bound + 3.0 * se), n=n_paths,
            meta={"mean": float(m), "bound": float(bound), "std_error": float(se)}))
    mono_ok = all(means[i + 1] <= means[i] + 3.0 * math.hypot(ses[i], ses[i + 1])
                  for i in range(len(means) - 1))
    reports.append(verify.TestReport("supermartingale monotone in t",
                                     0.0 if mono_ok else 1.0, mono_ok,
                                     meta={"means": [float(m) for m in means]}))
    return reports


def _renewal_vec(spec, zs):
    if spec.family is Family.DRIFT:
        return zs / spec.kappa
    if spec.family is Family.POISSON:
        return (np.floor(zs) + 1.0) / spec.jump_rate
    if spec.family is Family.STABLE:
        from scipy.special import gamma as _g
        return zs ** spec.alpha / _g(1.0 + spec.alpha)
    return np.array([renewal(spec, float(z)) for z in zs])


def _density_vec(spec, zs):
    if spec.family is Family.DRIFT:
        return np.full_like(zs, 1.0 / spec.kappa)
    if spec.family is Family.STABLE:
        from scipy.special import gamma as _g
        return zs ** (spec.alpha - 1.0) / _g(spec.alpha)
    return np.array([potential.potential_density(spec, float(z)) for z in zs])


# ---------------------------------------------------------------------------
# the exponential-killing limit
# ---------------------------------------------------------------------------

@dataclass
class PathEvent:
    """An event A in F_T together with its stopping time T.

    ``evaluate(path)`` returns (occurred, T).  T may exceed the recorded
    horizon when the event has not happened; such contributions are cut by
    the e_q window anyway."""

    name: str
    evaluate: Callable[[PathSample], tuple]


def event_first_passage(y: float) -> PathEvent:
    def ev(path: PathSample):
        tau = first_passage_time(path, y)
        return math.isfinite(tau), tau
    return PathEvent(f"first passage above {y}", ev)


def event_state_at(t: float, predicate, name: Optional[str] = None) -> PathEvent:
    def ev(path: PathSample):
        if t > path.horizon:
            return False, t
        return bool(predicate(path.value_at(t))), t
    return PathEvent(name or f"state test at t={t}", ev)


def event_whole_space() -> PathEvent:
    return PathEvent("whole space at T=0", lambda path: (True, 0.0))


@dataclass
class KillingLimitResult:
    qs: np.ndarray
    estimates: np.ndarray
    std_errors: np.ndarray
    extrapolated: float
    extrapolated_err: float
    reference: float
    reference_se: float
    inconclusive: bool

    def rows(self):
        return list(zip(self.qs, self.estimates, self.std_errors))


def verify_killing_limit(law: StripLaw, event: PathEvent, q_seq,
                         n_paths: int, rng, mode: str = "analytic",
                         t_hint: float = 0.0) -> KillingLimitResult:
    """Estimate P(A, T < e_q | e_q < tau_a^+) along q_seq and extrapolate.

    mode "analytic" integrates the independent exponential clock out of each
    simulated path (same estimand, far lower variance); mode "reject"
    draws e_q and conditions by rejection.  The reference value of the
    strip-law probability P(A, T < zeta) is estimated by the stopped
    renewal-weight representation on the same paths.
    """
    if not law.spec.finite_activity:
        raise UnsupportedModeError("killing-limit verification runs on "
                                   "finite-activity families")
    gen = rng.generator() if isinstance(rng, RngStream) else rng
    qs = np.asarray(sorted(q_seq, reverse=True), dtype=float)
    u_norm = renewal(law.spec, law.a - law.x0)

    ind = np.zeros(n_paths, bool)
    t_ev = np.zeros(n_paths)
    tau_a = np.zeros(n_paths)
    ref_w = np.zeros(n_paths)
    for i in range(n_paths):
        path = _path_until_crossing(law.spec, law.a, max(t_hint, 0.0), gen,
                                    x0=law.x0)
        occ, t_i = event.evaluate(path)
        tau = first_passage_time(path, law.a)
        ind[i], t_ev[i], tau_a[i] = occ, t_i, tau
        if occ and t_i < tau and math.isfinite(t_i):
            x_t = path.value_at(t_i)
            if x_t < law.a:
                ref_w[i] = renewal(law.spec, law.a - x_t) / u_norm
            elif x_t == law.a and law.spec.lattice:
                ref_w[i] = potential.potential_atom_at_zero(law.spec) / u_norm

    est = np.empty(qs.size)
    ses = np.empty(qs.size)
    ok = ind & (t_ev < tau_a)
    for j, q in enumerate(qs):
        if mode == "analytic":
            num_i = np.where(ok, np.exp(-q * np.minimum(t_ev, tau_a))
                             - np.exp(-q * tau_a), 0.0)
            den_i = 1.0 - np.exp(-q * tau_a)
        elif mode == "reject":
            e_q = gen.standard_exponential(n_paths) / q
            num_i = (ok & (t_ev < e_q) & (e_q < tau_a)).astype(float)
            den_i = (e_q < tau_a).astype(float)
        else:
            raise UnsupportedModeError(f"unknown mode {mode!r}")
        num, den = num_i.mean(), den_i.mean()
        est[j] = num / den
        infl = (num_i - est[j] * den_i) / den
        ses[j] = infl.std(ddof=1) / math.sqrt(n_paths)
    limit, err = verify.extrapolate_q(qs, est, ses)
    ref = float(ref_w.mean())
    ref_se = float(ref_w.std(ddof=1) / math.sqrt(n_paths))
    inconclusive = bool(err > 0.05 or not np.isfinite(limit))
    return KillingLimitResult(qs, est, ses, float(limit), float(err),
                              ref, ref_se, inconclusive)


def _path_until_crossing(spec, a, t_min, gen, x0=0.0) -> PathSample:
    horizon = max(t_min, 2.0 * (a - x0 + 1.0) / spec.mean_rate, 1e-6)
    for _ in range(40):
        path = sample_path(spec, horizon, "jump_exact", gen, x0=x0)
        if math.isfinite(first_passage_time(path, a)) and horizon >= t_min:
            return path
        horizon *= 2.0
    raise RuntimeError("path failed to cross the barrier within horizon doublings")
