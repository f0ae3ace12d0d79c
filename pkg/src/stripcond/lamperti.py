"""The self-similar picture for the stable strip: the barrier-gap process
Y_t = a - X_t (killed on crossing) is a positive self-similar Markov process,
a exp(xi) run through the additive-functional clock int exp(alpha xi) du.

The underlying spectrally one-sided log-process xi is the negative of a
killed subordinator with

    Phi(lam)      = Gamma(1+lam) / Gamma(1+lam-alpha),  killing Phi(0) = 1/Gamma(1-alpha),
    Phi_down(lam) = Gamma(1+lam+alpha) / Gamma(1+lam)   (strip tilt, still killed),
    Phi_circ(lam) = Gamma(alpha+lam) / Gamma(lam)       (hit tilt, conservative),

the tilted exponents being Phi(lam + alpha) and Phi(lam + alpha - 1); the
latter shift is legitimate because Gamma(alpha)/Gamma(0) = 0, i.e. the
identity Phi(alpha - 1) = 0 holds as a reciprocal-Gamma statement.

The undershoot of the stable subordinator below a barrier follows the
generalised arcsine law, which is what identifies the killing rate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import special

from . import stablelaw
from .errors import DomainError, UnsupportedModeError
from .models import Family, PathSample, RngStream, SubordinatorSpec, sample_path


def phi_xi(lam, alpha: float):
    """Gamma(1+lam)/Gamma(1+lam-alpha) via the reciprocal Gamma (handles the
    analytic continuation at lam = alpha-1, where it vanishes)."""
    if not (0.0 < alpha < 1.0):
        raise DomainError("alpha must lie in (0, 1)")
    lam = np.asarray(lam, dtype=float)
    out = special.gamma(1.0 + lam) * special.rgamma(1.0 + lam - alpha)
    return float(out) if out.ndim == 0 else out


def phi_down(lam, alpha: float):
    """Tilted exponent Phi(lam + alpha); killed since Phi_down(0) > 0."""
    if not (0.0 < alpha < 1.0):
        raise DomainError("alpha must lie in (0, 1)")
    lam = np.asarray(lam, dtype=float)
    out = special.gamma(1.0 + lam + alpha) * special.rgamma(1.0 + lam)
    return float(out) if out.ndim == 0 else out


def phi_circ(lam, alpha: float):
    """Tilted exponent Phi(lam + alpha - 1); conservative, Phi_circ(0) = 0."""
    if not (0.0 < alpha < 1.0):
        raise DomainError("alpha must lie in (0, 1)")
    lam = np.asarray(lam, dtype=float)
    out = special.gamma(alpha + lam) * special.rgamma(lam)
    return float(out) if out.ndim == 0 else out


def killing_rate(alpha: float) -> float:
    """Phi(0) = 1/Gamma(1-alpha)."""
    return float(special.rgamma(1.0 - alpha))


def undershoot_density(y, alpha: float):
    """Generalised arcsine density of the relative undershoot on (0, 1)."""
    if not (0.0 < alpha < 1.0):
        raise DomainError("alpha must lie in (0, 1)")
    ya = np.asarray(y, dtype=float)
    if np.any((ya <= 0.0) | (ya >= 1.0)):
        raise DomainError("undershoot density lives on the open interval (0, 1)")
    norm = math.sin(math.pi * alpha) / math.pi  # 1/(Gamma(1-alpha) Gamma(alpha))
    out = norm * ya ** (-alpha) * (1.0 - ya) ** (alpha - 1.0)
    return float(out) if out.ndim == 0 else out


def undershoot_cdf(y, alpha: float):
    """Regularised incomplete Beta(1-alpha, alpha)."""
    ya = np.asarray(y, dtype=float)
    out = special.betainc(1.0 - alpha, alpha, np.clip(ya, 0.0, 1.0))
    return float(out) if out.ndim == 0 else out


# ---------------------------------------------------------------------------
# the transform itself
# ---------------------------------------------------------------------------

@dataclass
class LampertiView:
    """xi on its own clock, extracted from a barrier-gap path.

    xi_path.times are xi-clock instants; clock[i] stores the additive
    functional int_0^{u_i} exp(alpha xi) dv = a^(-alpha) t_i, which realises
    the inverse time change, so reconstruction is a pure lookup.
    """

    alpha: float
    a: float
    xi_path: PathSample
    clock: np.ndarray

    def reconstruct(self, t) -> np.ndarray:
        """Y at original times t from the stored skeleton (exact lookup)."""
        s = np.atleast_1d(np.asarray(t, dtype=float)) * self.a ** (-self.alpha)
        idx = np.clip(np.searchsorted(self.clock, s, side="right") - 1, 0, None)
        return self.a * np.exp(self.xi_path.values[idx])


def lamperti_transform(path: PathSample, a: float, alpha: float) -> LampertiView:
    """Extract xi and its clock from a subordinator path below the barrier a.

    The gap Y = a - X must be positive before the path's kill time; if the
    recorded path touches or crosses a, it is treated as killed at the first
    such index.  The clock integral uses the piecewise-constant gap between
    records (trapezoidal accumulation of Y^-alpha in original time).
    """
    if not (0.0 < alpha < 1.0):
        raise DomainError("alpha must lie in (0, 1)")
    y = a - path.values
    alivemask = y > 0.0
    if not alivemask[0]:
        raise DomainError("path starts at or above the barrier")
    if alivemask.all():
        cut = y.size
        killed = path.killed
    else:
        cut = int(np.argmin(alivemask))
        killed = True
    t = path.times[:cut]
    gap = y[:cut]
    integrand = gap ** (-alpha)
    u = np.concatenate([[0.0], np.cumsum(0.5 * (integrand[1:] + integrand[:-1])
                                         * np.diff(t))])
    xi = np.log(gap / a)
    lifetime = float(u[-1]) if killed else math.inf
    xi_path = PathSample(u, xi, lifetime=lifetime, killed=killed)
    clock = t * a ** (-alpha)
    return LampertiView(alpha, a, xi_path, clock)


# ---------------------------------------------------------------------------
# tilted samplers
# ---------------------------------------------------------------------------

def sample_hit_pssmp(alpha: float, distance: float, dt: float,
                     gen: np.random.Generator):
    """Exact path of the gap process conditioned to be absorbed continuously,
    i.e. the self-similar realisation of the hit law.

    Runs the tilted step kernel of `stablelaw` (each step's sub-stochastic
    transition is sampled exactly, with the absorbed-within-step branch
    carrying its true mass).  Returns (times, gaps, absorption_time).
    """
    return stablelaw.hit_chain_path(distance, alpha, dt, gen)


def esscher_sample_xi(alpha: float, tilt: Optional[str], horizon: float, rng, *,
                      dt: float = 1e-3, barrier: float = 1.0) -> PathSample:
    """Sample xi up to xi-time ``horizon`` under a tilt.

    tilt None      the untilted killed process, extracted from a plain stable
                   path run until it crosses the barrier;
    tilt "down"    exponent Phi_down: realised without weights through the
                   terminal-value decomposition of the strip law (draw the
                   killing level, then run the exact hit chain);
    tilt "circ"    exponent Phi_circ: exponential weighting of the untilted
                   path, weight exp((alpha-1) xi_horizon) on survival and 0
                   on the killed set (a martingale weight since the exponent
                   vanishes at alpha-1), so weighted means are tilted means.

    Returned paths live on the xi clock; weights are 1 except for circ.
    An unweighted realisation of the circ-tilted gap process itself is
    available through ``sample_hit_pssmp``.
    """
    if not (0.0 < alpha < 1.0):
        raise DomainError("alpha must lie in (0, 1)")
    gen = rng.generator() if isinstance(rng, RngStream) else rng
    spec = SubordinatorSpec.stable(alpha)
    if tilt is None:
        path = _stable_path_until_crossing(spec, barrier, gen, dt)
        view = lamperti_transform(path, barrier, alpha)
        return _truncate_xi(view.xi_path, horizon)
    if tilt == "down":
        u_draw = gen.random() ** (1.0 / alpha)
        target = max(barrier * u_draw, barrier * 1e-12)
        times, dists, zeta = sample_hit_pssmp(alpha, target, dt, gen)
        # X runs from 0 to `target`; the gap to the *barrier* is barrier - X
        xs = target - dists
        full_t = np.concatenate([times, [zeta]]) if zeta > times[-1] else times
        full_x = np.concatenate([xs, [target]]) if zeta > times[-1] \
            else np.concatenate([xs[:-1], [target]])
        path = PathSample(full_t, full_x, lifetime=float(full_t[-1]), killed=True)
        view = lamperti_transform(path, barrier, alpha)
        return _truncate_xi(view.xi_path, horizon)
    if tilt == "circ":
        path = _stable_path_until_crossing(spec, barrier, gen, dt)
        view = lamperti_transform(path, barrier, alpha)
        xi_path = view.xi_path
        if xi_path.lifetime <= horizon:
            return PathSample(xi_path.times, xi_path.values,
                              lifetime=xi_path.lifetime, killed=True,
                              weight=0.0)
        trunc = _truncate_xi(xi_path, horizon)
        w = math.exp((alpha - 1.0) * trunc.values[-1])
        return PathSample(trunc.times, trunc.values, weight=w)
    raise UnsupportedModeError(f"unknown tilt {tilt!r}")


def _stable_path_until_crossing(spec, barrier, gen, dt) -> PathSample:
    horizon = max(barrier ** spec.alpha, 4.0 * dt)
    times = [np.array([0.0])]
    values = [np.array([0.0])]
    t0, v0 = 0.0, 0.0
    for _ in range(60):
        seg = sample_path(spec, horizon, "grid", gen, dt=dt, x0=v0)
        times.append(seg.times[1:] + t0)
        values.append(seg.values[1:])
        t0 += seg.times[-1]
        v0 = float(seg.values[-1])
        if v0 > barrier:
            break
        horizon *= 1.5
    else:
        raise RuntimeError("stable path failed to cross the barrier")
    t = np.concatenate(times)
    v = np.concatenate(values)
    cross = int(np.argmax(v > barrier))
    return PathSample(t[:cross + 1], v[:cross + 1],
                      lifetime=float(t[cross]), killed=True)


def _truncate_xi(xi_path: PathSample, horizon: float) -> PathSample:
    """Restrict a xi path to xi-times <= horizon, keeping kill information."""
    if xi_path.killed and xi_path.lifetime <= horizon:
        return xi_path
    keep = xi_path.times <= horizon
    if not keep.any():
        keep = np.zeros(xi_path.times.size, bool)
        keep[0] = True
    t = xi_path.times[keep]
    v = xi_path.values[keep]
    return PathSample(t, v)


# ---------------------------------------------------------------------------
# vectorised batch helpers
# ---------------------------------------------------------------------------

def xi_at_clock_batch(alpha: float, u_values, n: int, dt: float,
                      gen: np.random.Generator, barrier: float = 1.0):
    """xi evaluated at the requested clock times for n untilted paths.

    Simulates the stable path on an X-time grid, accumulates the clock
    int (barrier - X)^-alpha dt by the trapezoid rule, and records
    xi = log((barrier - X)/barrier) when the clock passes each requested
    value.  Killed-before entries are -inf (they carry zero mass in every
    exponential moment).  Kill detection is at grid resolution, so use a
    small dt for tight moment tests.
    """
    us = np.sort(np.asarray(u_values, dtype=float))
    x = np.zeros(n)
    clock = np.zeros(n)
    alive = np.ones(n, bool)
    out = np.full((us.size, n), -np.inf)
    c = dt ** (1.0 / alpha)
    max_iter = int(5e7 / max(n, 1)) + 10000
    for _ in range(max_iter):
        idx = np.flatnonzero(alive)
        if idx.size == 0:
            break
        inc = c * stablelaw.sample(alpha, idx.size, gen)
        x_new = x[idx] + inc
        crossed = x_new >= barrier
        survivors = idx[~crossed]
        alive[idx[crossed]] = False
        if survivors.size:
            y_old = barrier - x[survivors]
            y_new = barrier - x_new[~crossed]
            dclock = 0.5 * dt * (y_old ** -alpha + y_new ** -alpha)
            new_clock = clock[survivors] + dclock
            for k, u in enumerate(us):
                hit = (clock[survivors] < u) & (new_clock >= u)
                tgt = survivors[hit]
                out[k, tgt] = np.log(y_new[hit] / barrier)
            clock[survivors] = new_clock
            x[survivors] = x_new[~crossed]
        if not alive.any() or (clock[alive] > us[-1]).all():
            break
    return out


def down_tilt_kill_times(alpha: float, n: int, dt: float,
                         gen: np.random.Generator) -> np.ndarray:
    """Vectorised kill times (on the xi clock) of the down-tilted process.

    Realised through the strip decomposition with barrier 1: draw the
    terminal level, run the conditioned-to-hit chain, and accumulate the
    clock with the gap to the *barrier*; the kill fires at the chain's
    absorption.  Exponential with rate Gamma(1 + alpha) in law."""
    targets = gen.random(n) ** (1.0 / alpha)
    s = targets.copy()           # distance to the hit target
    clock = np.zeros(n)
    done = np.zeros(n, bool)
    kill = np.empty(n)
    c = dt ** (1.0 / alpha)
    while not done.all():
        idx = np.flatnonzero(~done)
        theta_fixed = s[idx] / c
        adaptive = theta_fixed < stablelaw.THETA_STAR
        step = np.where(adaptive, (s[idx] / stablelaw.THETA_STAR) ** alpha, dt)
        theta = np.where(adaptive, stablelaw.THETA_STAR, theta_fixed)
        m = stablelaw.survival_mass(theta, alpha)
        absorbed = gen.random(idx.size) >= m
        gap_old = 1.0 - targets[idx] + s[idx]
        ia = idx[absorbed]
        if ia.size:
            part = gen.random(ia.size)
            kill[ia] = clock[ia] + part * step[absorbed] * gap_old[absorbed] ** -alpha
            done[ia] = True
        ic = idx[~absorbed]
        if ic.size:
            d = stablelaw.sample_hit_increment(theta[~absorbed], alpha, gen)
            s_new = np.maximum(s[ic] - d * step[~absorbed] ** (1.0 / alpha), 0.0)
            gap_new = 1.0 - targets[ic] + s_new
            clock[ic] += 0.5 * step[~absorbed] * (gap_old[~absorbed] ** -alpha
                                                  + gap_new ** -alpha)
            s[ic] = s_new
            floor = targets[ic] * stablelaw.REL_ABSORB
            tiny = s_new <= floor
            it = ic[tiny]
            if it.size:
                kill[it] = clock[it]
                done[it] = True
    return kill


def circ_weighted_moments(alpha: float, lam_values, u: float, n: int,
                          dt: float, gen: np.random.Generator,
                          barrier: float = 1.0):
    """Weighted estimates of E_circ[e^{lam xi_u}] = e^{-u Phi_circ(lam)} via
    the martingale weight e^{(alpha-1) xi_u}; returns (estimates, ses,
    weights mean, weights se)."""
    xi = xi_at_clock_batch(alpha, [u], n, dt, gen, barrier)[0]
    w = np.where(np.isfinite(xi), np.exp((alpha - 1.0) * xi), 0.0)
    ests, ses = [], []
    for lam in np.atleast_1d(lam_values):
        vals = np.where(np.isfinite(xi), np.exp(lam * xi), 0.0) * w
        ests.append(float(vals.mean()))
        ses.append(float(vals.std(ddof=1) / math.sqrt(n)))
    return (np.asarray(ests), np.asarray(ses), float(w.mean()),
            float(w.std(ddof=1) / math.sqrt(n)))


def undershoot_samples(alpha: float, a: float, n: int, dt: float,
                       gen: np.random.Generator) -> np.ndarray:
    """Relative undershoots (a - X just below the crossing)/a from grid paths.

    The pre-crossing grid state differs from the true left limit only by the
    small-jump drift inside one step (median scale dt^(1/alpha)), negligible
    against the arcsine-law tests."""
    c = dt ** (1.0 / alpha)
    x = np.zeros(n)
    out = np.empty(n)
    pending = np.ones(n, bool)
    while pending.any():
        idx = np.flatnonzero(pending)
        inc = c * stablelaw.sample(alpha, idx.size, gen)
        x_new = x[idx] + inc
        crossed = x_new > a
        hit = idx[crossed]
        out[hit] = (a - x[hit]) / a
        pending[hit] = False
        keep = idx[~crossed]
        x[keep] = x_new[~crossed]
    return out
