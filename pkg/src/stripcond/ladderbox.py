"""Brownian motion conditioned to reach its overall supremum inside a
time-space box [0, a) x [0, b).

The local time at the supremum is normalised so the ascending ladder height
is a unit drift (L-bar = S, the running maximum), making every object
closed form:

* the ladder renewal measure is V(ds, dx) = P(tau_x^+ in ds) dx with the
  entrance kernel q*_s(y) = y exp(-y^2/2s)/sqrt(2 pi s^3),
* the box mass V_q integrates exp(-qs) q*_s(y) over the box,
* the ladder-time exponent is kappa(q, 0) = sqrt(2q),
* the pre-supremum conditional law given {g = s} reweights by
  h_s(t, S_t - X_t, X_t) = (entrance mass of (S_t - X_t, b - X_t) at s - t),
* the post-supremum process (viewed downward from the maximum) is the dual
  conditioned to stay positive: the Bessel(3) process from 0.

Skeleton simulation draws Gaussian increments and the exact per-step
Brownian-bridge maximum, so running maxima (and barrier crossings) carry no
monitoring bias; only time placements inside a step are O(dt).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy import special, stats
from scipy.integrate import quad

from . import verify
from .errors import DomainError
from .models import PathSample, RngStream

SQRT2PI = math.sqrt(2.0 * math.pi)


@dataclass(frozen=True)
class LadderBoxLaw:
    a: float
    b: float
    skeleton_dt: float = 1e-3

    def __post_init__(self):
        if self.a <= 0 or self.b <= 0:
            raise DomainError("a and b must be positive")
        if self.skeleton_dt <= 0:
            raise DomainError("skeleton_dt must be positive")


def entrance_density_bm(s, y):
    """q*_s(y) = y exp(-y^2/(2s)) / sqrt(2 pi s^3), s > 0, y > 0."""
    s = np.asarray(s, dtype=float)
    y = np.asarray(y, dtype=float)
    if np.any(s <= 0) or np.any(y <= 0):
        raise DomainError("entrance density needs s > 0, y > 0")
    out = y * np.exp(-y * y / (2.0 * s)) / (SQRT2PI * s ** 1.5)
    return float(out) if out.ndim == 0 else out


def entrance_interval_mass(s, lo, hi):
    """n(lo < eps_s < hi, s < zeta) = (e^{-lo^2/2s} - e^{-hi^2/2s})/sqrt(2 pi s)."""
    s = np.asarray(s, dtype=float)
    lo = np.maximum(np.asarray(lo, dtype=float), 0.0)
    hi = np.asarray(hi, dtype=float)
    out = np.where(hi > lo,
                   (np.exp(-lo * lo / (2.0 * s)) - np.exp(-hi * hi / (2.0 * s)))
                   / np.sqrt(2.0 * np.pi * s),
                   0.0)
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class EntranceKernel:
    """Callable wrapper (s, y) -> q*_s(y); positive and continuous on y > 0."""

    def __call__(self, s, y):
        return entrance_density_bm(s, y)


def kappa_ladder_time(q: float) -> float:
    """Laplace exponent of the ladder-time subordinator: sqrt(2q)."""
    if q < 0:
        raise DomainError("q must be nonnegative")
    return math.sqrt(2.0 * q)


def V_box(law: LadderBoxLaw, q: float = 0.0) -> float:
    """V_q([0,a) x [0,b)) = int_0^a e^{-qs} (1 - e^{-b^2/2s}) / sqrt(2 pi s) ds.

    The substitution s = v^2 removes the inverse-root endpoint, after which
    adaptive quadrature reaches ~1e-10 relative accuracy;
    b = +inf gives sqrt(2a/pi) exactly at q = 0.
    """
    if q < 0:
        raise DomainError("q must be nonnegative")
    a, b = law.a, law.b
    if math.isinf(b) and q == 0.0:
        return math.sqrt(2.0 * a / math.pi)

    def integrand(v):
        s = v * v
        tail = 1.0 if math.isinf(b) else -math.expm1(-b * b / (2.0 * s))
        return 2.0 * math.exp(-q * s) * tail / SQRT2PI

    val, err = quad(integrand, 0.0, math.sqrt(a), limit=200,
                    epsabs=1e-13, epsrel=1e-11)
    if err > 1e-7 * max(abs(val), 1e-12):
        raise DomainError(f"box quadrature failed to converge (err={err:.1e})")
    return float(val)


def g_S_joint_density(law: LadderBoxLaw, s, y) -> np.ndarray:
    """Joint density of (g_inf, S_g_inf) under the box law: q*_s(y)/V on the
    box, 0 outside."""
    s = np.atleast_1d(np.asarray(s, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    v = V_box(law, 0.0)
    inside = (s > 0.0) & (s <= law.a) & (y >= 0.0) & (y <= law.b)
    out = np.zeros(np.broadcast_shapes(s.shape, y.shape))
    ss = np.broadcast_to(s, out.shape)
    yy = np.broadcast_to(y, out.shape)
    m = inside & (yy > 0.0)
    out[m] = entrance_density_bm(ss[m], yy[m]) / v
    return out


def tilted_passage_mass(y, horizon, q: float):
    """int_0^T e^{-qs} q*_s(y) ds, closed form:
    (1/2)[e^{-y sqrt(2q)} erfc(y/sqrt(2T) - sqrt(qT))
          + e^{+y sqrt(2q)} erfc(y/sqrt(2T) + sqrt(qT))].

    At q = 0 this is erfc(y / sqrt(2T)) = P(first passage over y by T)."""
    y = np.asarray(y, dtype=float)
    t = np.asarray(horizon, dtype=float)
    if q < 0:
        raise DomainError("q must be nonnegative")
    root = math.sqrt(2.0 * q)
    z = y / np.sqrt(2.0 * t)
    sq = np.sqrt(q * t)
    return 0.5 * (np.exp(-y * root) * special.erfc(z - sq)
                  + np.exp(y * root) * special.erfc(z + sq))


def box_cell_mass(law: LadderBoxLaw, q: float = 0.0):
    """Exact expected mass of a cell [s0,s1] x [y0,y1] under the (tilted)
    joint kernel e^{-qs} q*_s(y) ds dy, via Gauss-Legendre in y of the
    closed-form windowed passage mass (the kernel ridge s ~ y^2 makes naive
    2-d quadrature useless)."""
    nodes, weights = np.polynomial.legendre.leggauss(24)

    def mass(s0, s1, y0, y1):
        ys = 0.5 * (nodes + 1.0) * (y1 - y0) + y0
        ws = 0.5 * weights * (y1 - y0)
        hi = tilted_passage_mass(ys, max(s1, 1e-300), q)
        lo = tilted_passage_mass(ys, max(s0, 1e-300), q) if s0 > 0 else 0.0
        return float(np.sum((hi - lo) * ws))

    return mass


def h_s_box(law: LadderBoxLaw, t: float, x: float, y: float, s: float) -> float:
    """h_s(t, x, y) = n(x < eps_{s-t} < b - y), the pre-supremum harmonic
    weight; 0 on the empty interval x >= b - y."""
    if t >= s:
        raise DomainError("need t < s")
    if x < 0:
        raise DomainError("x must be nonnegative")
    return float(entrance_interval_mass(s - t, x, law.b - y))


# ---------------------------------------------------------------------------
# skeleton engines
# ---------------------------------------------------------------------------

def _bridge_max(x0: np.ndarray, x1: np.ndarray, dt,
                gen: np.random.Generator) -> np.ndarray:
    """Exact maximum of a Brownian bridge over one step given endpoints."""
    u = gen.random(np.shape(x0))
    d = x1 - x0
    return 0.5 * (x0 + x1 + np.sqrt(d * d - 2.0 * dt * np.log1p(-u)))


def simulate_sup_state(n: int, t_eval: float, dt: float,
                       gen: np.random.Generator):
    """(X_t, S_t) with the running maximum exact in law (bridge maxima)."""
    steps = int(round(t_eval / dt))
    x = np.zeros(n)
    s = np.zeros(n)
    sq = math.sqrt(dt)
    for _ in range(steps):
        x1 = x + sq * gen.standard_normal(n)
        m = _bridge_max(x, x1, dt, gen)
        np.maximum(s, m, out=s)
        x = x1
    return x, s


def h_s_identity_mc(law: LadderBoxLaw, s: float, t: float, n: int, rng,
                    dt: Optional[float] = None):
    """Monte Carlo of E[h_s(t, S_t - X_t, X_t); S_t < b] against h_s(0,0,0).

    The pair (S_t, X_t) is exact in law, so the identity holds at any dt."""
    gen = rng.generator() if isinstance(rng, RngStream) else rng
    dt = dt or law.skeleton_dt
    x, smax = simulate_sup_state(n, t, dt, gen)
    vals = np.where(smax < law.b,
                    entrance_interval_mass(s - t, np.maximum(smax - x, 0.0),
                                           law.b - x),
                    0.0)
    target = h_s_box(law, 0.0, 0.0, 0.0, s)
    return verify.mean_report(vals, target, f"h_s identity t={t}")


def sample_pre_supremum(law: LadderBoxLaw, s: float, rng, *,
                        t_eval: Optional[float] = None,
                        dt: Optional[float] = None) -> PathSample:
    """Skeleton path weighted into the conditional pre-supremum law given
    {g_inf = s}: weight h_s(T, S_T - X_T, X_T)/h_s(0,0,0) on {S_T < b}."""
    if not (0.0 < s < law.a):
        raise DomainError("need 0 < s < a")
    gen = rng.generator() if isinstance(rng, RngStream) else rng
    dt = dt or law.skeleton_dt
    t_eval = t_eval if t_eval is not None else 0.5 * s
    if not (0.0 < t_eval < s):
        raise DomainError("evaluation horizon must lie in (0, s)")
    steps = int(round(t_eval / dt))
    sq = math.sqrt(dt)
    incs = sq * gen.standard_normal(steps)
    xs = np.concatenate([[0.0], np.cumsum(incs)])
    m = _bridge_max(xs[:-1], xs[1:], dt, gen)
    smax = np.maximum.accumulate(np.concatenate([[0.0], m]))
    times = np.arange(steps + 1) * dt
    if smax[-1] < law.b:
        w = h_s_box(law, t_eval, max(smax[-1] - xs[-1], 0.0), xs[-1], s) \
            / h_s_box(law, 0.0, 0.0, 0.0, s)
    else:
        w = 0.0
    return PathSample(times, xs, weight=w)


def bessel3_pdf(x, t):
    x = np.asarray(x, dtype=float)
    return np.sqrt(2.0 / np.pi) * x * x * np.exp(-x * x / (2.0 * t)) / t ** 1.5


def bessel3_cdf(x, t):
    x = np.asarray(x, dtype=float)
    z = x / math.sqrt(t)
    return special.erf(z / math.sqrt(2.0)) \
        - np.sqrt(2.0 / np.pi) * z * np.exp(-z * z / 2.0)


def tilted_post_cdf(u: float, q: float, grid_n: int = 4001):
    """CDF of the post-supremum value at lag u under the finite-q clock:
    density ~ q*_u(x) (1 - e^{-x sqrt(2q)}), the excessive-weight tilt whose
    q -> 0 limit is the Bessel(3) marginal.  Returns a vectorised callable."""
    xs = np.linspace(0.0, 12.0 * math.sqrt(u), grid_n)
    root = math.sqrt(2.0 * q)
    dens = np.zeros_like(xs)
    dens[1:] = entrance_density_bm(u, xs[1:]) * (-np.expm1(-xs[1:] * root))
    cdf = np.concatenate([[0.0], np.cumsum(0.5 * (dens[1:] + dens[:-1])
                                           * np.diff(xs))])
    cdf /= cdf[-1]

    def f(z):
        return np.interp(np.asarray(z, dtype=float), xs, cdf)

    return f


def sample_post_supremum(law: LadderBoxLaw, horizon: float, rng, *,
                         dt: Optional[float] = None) -> PathSample:
    """The dual conditioned to stay positive from 0: for Brownian motion the
    Bessel(3) process, realised as the norm of three independent coordinates."""
    gen = rng.generator() if isinstance(rng, RngStream) else rng
    dt = dt or law.skeleton_dt
    steps = max(int(round(horizon / dt)), 1)
    inc = math.sqrt(dt) * gen.standard_normal((steps, 3))
    coords = np.cumsum(inc, axis=0)
    vals = np.concatenate([[0.0], np.linalg.norm(coords, axis=1)])
    times = np.arange(steps + 1) * dt
    return PathSample(times, vals)


def sample_box_joint(law: LadderBoxLaw, n: int, rng, *,
                     dt: Optional[float] = None, chunk: int = 20_000):
    """(g, S) under the box law by a path mechanism: draw the supremum height
    uniformly on (0, b), run a skeleton to its first passage (bridge maxima
    detect crossings exactly), and accept passages by time a.

    The first-passage time of a uniform height has joint density q*_s(y), so
    accepted pairs follow the box law; the time inside the crossing step is
    placed uniformly (O(dt) only).
    """
    gen = rng.generator() if isinstance(rng, RngStream) else rng
    dt = dt or law.skeleton_dt
    steps = int(round(law.a / dt))
    out_s = []
    out_y = []
    got = 0
    while got < n:
        m = chunk
        y = law.b * gen.random(m)
        x = np.zeros(m)
        smax = np.zeros(m)
        tau_idx = np.full(m, -1)
        active = np.arange(m)
        sq = math.sqrt(dt)
        for k in range(steps):
            if active.size == 0:
                break
            x1 = x[active] + sq * gen.standard_normal(active.size)
            bm = _bridge_max(x[active], x1, dt, gen)
            crossed = bm > y[active]
            hit = active[crossed]
            tau_idx[hit] = k
            x[active] = x1
            active = active[~crossed]
        ok = tau_idx >= 0
        s_take = (tau_idx[ok] + gen.random(int(ok.sum()))) * dt
        out_s.append(s_take)
        out_y.append(y[ok])
        got += int(ok.sum())
    return np.concatenate(out_s)[:n], np.concatenate(out_y)[:n]


# ---------------------------------------------------------------------------
# the exponential-clock limit
# ---------------------------------------------------------------------------

def _simulate_to_clock(law, q, n, dt, u_post, gen):
    """Paths to an independent Exp(q) horizon with exact running maxima.

    Stores the skeleton on [0, a + u_post] (all the conditioning and the
    post-supremum window need) and streams the remainder, tracking the
    global maximum and its step index.  Returns (g, S, argmax step, stored
    skeleton, step counts)."""
    keep_steps = int(round((law.a + u_post) / dt)) + 1
    e = gen.standard_exponential(n) / q
    n_full = np.floor(e / dt).astype(int)
    rem = e - n_full * dt
    max_steps = int(n_full.max())
    sq = math.sqrt(dt)
    x = np.zeros(n)
    smax = np.zeros(n)
    arg = np.zeros(n, dtype=int)
    stored = np.zeros((n, keep_steps + 1), dtype=np.float32)
    for step in range(max_steps):
        live = step < n_full
        inc = sq * gen.standard_normal(n)
        x1 = np.where(live, x + inc, x)
        bm = np.where(live, _bridge_max(x, x1, dt, gen), -np.inf)
        better = bm > smax
        smax = np.where(better, bm, smax)
        arg = np.where(better, step, arg)
        x = x1
        if step + 1 <= keep_steps:
            stored[:, step + 1] = x
    # exact partial step from n_full*dt to e_q
    dtp = np.maximum(rem, 1e-300)
    x1 = x + np.sqrt(dtp) * gen.standard_normal(n)
    bm = _bridge_max(x, x1, dtp, gen)
    better = bm > smax
    smax = np.where(better, bm, smax)
    arg = np.where(better, n_full, arg)
    g = np.minimum((arg + 0.5) * dt, e)
    return g, smax, arg, stored, n_full


@dataclass
class BoxLimitRow:
    q: float
    n_accepted: int
    ratio: float
    ratio_se: float
    joint_chi2: verify.TestReport
    post_ks: Optional[verify.TestReport]
    independence_z: float


def verify_box_limit(law: LadderBoxLaw, q_seq, n_paths: int, rng, *,
                     dt: Optional[float] = None, u_post: float = 0.25,
                     bins: int = 6) -> list:
    """Exponential-clock rejection check of the box conditioning.

    Per q: simulate to e_q, condition on {g <= a, S <= b} by rejection, then

    * the acceptance probability over kappa(q,0) V_q(box) has limit 1,
    * the accepted (g, S) pairs follow the exp(-qs)-tilted kernel exactly at
      every q (chi-square against the tilted density),
    * the post-supremum value S - X_{g + u_post} is compared against the
      Bessel(3) law it converges to as q -> 0,
    * post-supremum increments are uncorrelated with the pre-supremum pair.
    """
    gen = rng.generator() if isinstance(rng, RngStream) else rng
    dt = dt or law.skeleton_dt
    rows = []
    chunk = 8000
    for q in sorted(q_seq, reverse=True):
        ui = int(round(u_post / dt))
        acc_g, acc_s, post_vals, post_g = [], [], [], []
        n_total, n_acc = 0, 0
        while n_total < n_paths:
            m = min(chunk, n_paths - n_total)
            g, smax, arg, stored, n_full = _simulate_to_clock(
                law, q, m, dt, u_post, gen)
            accept = (g <= law.a) & (smax <= law.b)
            n_total += m
            n_acc += int(accept.sum())
            acc_g.append(g[accept])
            acc_s.append(smax[accept])
            idx = np.flatnonzero(accept)
            room = (arg[idx] + ui < stored.shape[1] - 1) \
                & (arg[idx] + ui < n_full[idx])
            sel = idx[room]
            if sel.size:
                post_vals.append(smax[sel]
                                 - stored[sel, arg[sel] + ui + 1].astype(float))
                post_g.append(g[sel])
        g_all = np.concatenate(acc_g)
        s_all = np.concatenate(acc_s)
        p_acc = n_acc / n_total
        vq = V_box(law, q)
        target = kappa_ladder_time(q) * vq
        ratio = p_acc / target
        ratio_se = math.sqrt(max(p_acc * (1 - p_acc), 1e-12) / n_total) / target

        # joint law at this q: tilted kernel e^{-qs} q*_s(y) / V_q
        def tilted(ss, yy, _q=q, _vq=vq):
            return np.exp(-_q * ss) \
                * entrance_density_bm(ss, np.maximum(yy, 1e-12)) / _vq

        chi = verify.chi_square_grid(
            np.column_stack([g_all, s_all]), tilted,
            np.linspace(0.0, law.a, bins + 1),
            np.linspace(0.0, law.b, bins + 1), name=f"box joint q={q}",
            cell_mass=box_cell_mass(law, q))
        post_ks = None
        indep_z = 0.0
        if post_vals:
            pv = np.concatenate(post_vals)
            pg = np.concatenate(post_g)
            if pv.size > 50:
                post_ks = verify.ks_test(
                    np.maximum(pv, 0.0), tilted_post_cdf(u_post, q),
                    name=f"post-supremum (tilted law) q={q}")
                c = np.corrcoef(pv, pg)[0, 1]
                indep_z = float(c * math.sqrt(pv.size))
        rows.append(BoxLimitRow(q, n_acc, float(ratio), float(ratio_se), chi,
                                post_ks, indep_z))
    return rows
