"""Shared statistical machinery: KS and chi-square tests, CLT intervals,
effective sample size for weighted samples, and q -> 0 extrapolation.

Suite-wide thresholds live in one place (``Thresholds``): analytic identities
at 1e-8 (linear algebra) or 1e-12 (special functions), Monte Carlo
comparisons at 3 sigma or p > 0.01.  Weighted tests report the effective
sample size and fail with an explicit "underpowered" status when it drops
below 100, rather than passing vacuously.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import stats

from .errors import DomainError


@dataclass(frozen=True)
class Thresholds:
    linalg_tol: float = 1e-8
    special_tol: float = 1e-12
    mc_sigma: float = 3.0
    p_min: float = 0.01
    ess_min: float = 100.0


THRESHOLDS = Thresholds()


@dataclass
class TestReport:
    """Outcome of one named check; ``passed`` is a pure function of the
    statistic, its threshold, and the sample size."""

    name: str
    statistic: float
    passed: bool
    p_value: Optional[float] = None
    ci: Optional[tuple] = None
    n: Optional[int] = None
    ess: Optional[float] = None
    threshold: Optional[float] = None
    status: str = "ok"
    meta: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        doc = dataclasses.asdict(self)
        if doc["ci"] is not None:
            doc["ci"] = list(doc["ci"])
        return doc

    def __str__(self):
        tag = "PASS" if self.passed else "FAIL"
        extra = f" p={self.p_value:.4g}" if self.p_value is not None else ""
        return f"[{tag}] {self.name}: stat={self.statistic:.4g}{extra} ({self.status})"


def effective_sample_size(weights: np.ndarray) -> float:
    w = np.asarray(weights, dtype=float)
    s = w.sum()
    if s <= 0:
        return 0.0
    return float(s * s / np.sum(w * w))


def weighted_ecdf(samples: np.ndarray, weights: Optional[np.ndarray] = None):
    """Sorted support points and right-continuous cumulative weights."""
    x = np.asarray(samples, dtype=float)
    order = np.argsort(x, kind="stable")
    x = x[order]
    if weights is None:
        cw = np.arange(1, x.size + 1) / x.size
    else:
        w = np.asarray(weights, dtype=float)[order]
        cw = np.cumsum(w) / w.sum()
    return x, cw


def ks_test(samples, cdf, weights=None, name: str = "ks",
            p_min: float = THRESHOLDS.p_min,
            thresholds: Thresholds = THRESHOLDS) -> TestReport:
    """One-sample Kolmogorov-Smirnov test against a callable CDF.

    The weighted variant uses the normalised-weight empirical CDF; its
    p-value is computed at the effective sample size, a standard
    approximation whose ESS is always reported alongside.
    """
    x = np.asarray(samples, dtype=float)
    if weights is None:
        stat, p = stats.kstest(x, cdf)
        ess = float(x.size)
    else:
        xs, cw = weighted_ecdf(x, weights)
        f = np.asarray(cdf(xs), dtype=float)
        d_plus = np.max(cw - f)
        d_minus = np.max(f - np.concatenate([[0.0], cw[:-1]]))
        stat = float(max(d_plus, d_minus))
        ess = effective_sample_size(weights)
        p = float(stats.kstwo.sf(stat, max(int(ess), 1)))
    underpowered = ess < thresholds.ess_min
    passed = (p > p_min) and not underpowered
    return TestReport(name, float(stat), passed, p_value=float(p),
                      n=int(x.size), ess=ess, threshold=p_min,
                      status="underpowered" if underpowered else "ok")


def ks_two_sample(a, b, weights_a=None, weights_b=None, name: str = "ks2",
                  p_min: float = THRESHOLDS.p_min,
                  thresholds: Thresholds = THRESHOLDS) -> TestReport:
    """Two-sample KS; weighted sides contribute their ESS to the p-value."""
    if weights_a is None and weights_b is None:
        stat, p = stats.ks_2samp(np.asarray(a, float), np.asarray(b, float))
        ess_a, ess_b = float(len(a)), float(len(b))
        stat = float(stat)
    else:
        xa, ca = weighted_ecdf(a, weights_a)
        xb, cb = weighted_ecdf(b, weights_b)
        grid = np.concatenate([xa, xb])
        grid.sort(kind="stable")
        fa = np.concatenate([[0.0], ca])[np.searchsorted(xa, grid, side="right")]
        fb = np.concatenate([[0.0], cb])[np.searchsorted(xb, grid, side="right")]
        stat = float(np.max(np.abs(fa - fb)))
        ess_a = effective_sample_size(weights_a) if weights_a is not None else float(len(a))
        ess_b = effective_sample_size(weights_b) if weights_b is not None else float(len(b))
        n_eff = ess_a * ess_b / (ess_a + ess_b)
        p = float(stats.kstwobign.sf(math.sqrt(n_eff) * stat))
    ess = min(ess_a, ess_b)
    if weights_a is None and weights_b is None:
        p = float(p)
    underpowered = ess < thresholds.ess_min
    passed = (p > p_min) and not underpowered
    return TestReport(name, stat, passed, p_value=p, n=int(len(a)), ess=float(ess),
                      threshold=p_min,
                      status="underpowered" if underpowered else "ok")


def chi_square_grid(samples_2d, density, x_edges, y_edges, name: str = "chi2",
                    p_min: float = THRESHOLDS.p_min, min_expected: float = 5.0,
                    subgrid: int = 6, cell_mass=None) -> TestReport:
    """Chi-square test of 2-d samples against a known density on a grid.

    Expected counts integrate the density over each cell with a midpoint
    subgrid, or use an exact ``cell_mass(x0, x1, y0, y1)`` when the caller
    has one (needed for kernels with concentrated ridges).  Cells with fewer
    than ``min_expected`` expected counts are pooled.  Degrees of freedom are
    (cells - 1): the density is fully specified, nothing is fitted.
    """
    pts = np.asarray(samples_2d, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise DomainError("samples_2d must have shape (n, 2)")
    x_edges = np.asarray(x_edges, float)
    y_edges = np.asarray(y_edges, float)
    counts, _, _ = np.histogram2d(pts[:, 0], pts[:, 1], bins=(x_edges, y_edges))
    n = pts.shape[0]
    nx, ny = x_edges.size - 1, y_edges.size - 1
    expected = np.empty((nx, ny))
    for i in range(nx):
        xs = np.linspace(x_edges[i], x_edges[i + 1], 2 * subgrid + 1)[1::2]
        dx = (x_edges[i + 1] - x_edges[i]) / subgrid
        for j in range(ny):
            if cell_mass is not None:
                expected[i, j] = cell_mass(x_edges[i], x_edges[i + 1],
                                           y_edges[j], y_edges[j + 1])
                continue
            ys = np.linspace(y_edges[j], y_edges[j + 1], 2 * subgrid + 1)[1::2]
            dy = (y_edges[j + 1] - y_edges[j]) / subgrid
            xx, yy = np.meshgrid(xs, ys, indexing="ij")
            expected[i, j] = np.sum(density(xx, yy)) * dx * dy
    expected = expected.ravel() * n / max(np.sum(expected), 1e-300)
    observed = counts.ravel()
    # pool thin cells
    keep = expected >= min_expected
    obs = np.concatenate([observed[keep], [observed[~keep].sum()]]) if (~keep).any() \
        else observed[keep]
    exp = np.concatenate([expected[keep], [expected[~keep].sum()]]) if (~keep).any() \
        else expected[keep]
    if (~keep).any() and exp[-1] < min_expected:
        obs, exp = obs[:-1], exp[:-1]
    # renormalise to the retained total so the test is self-consistent
    exp = exp * obs.sum() / exp.sum()
    stat = float(np.sum((obs - exp) ** 2 / exp))
    dof = obs.size - 1
    p = float(stats.chi2.sf(stat, dof))
    passed = p > p_min
    return TestReport(name, stat, passed, p_value=p, n=n, threshold=p_min,
                      meta={"dof": dof, "cells": int(obs.size)})


def extrapolate_q(q_values, estimates, std_errors=None, degree: int = 2):
    """Extrapolate estimates observed at q values down to q -> 0.

    Weighted polynomial least squares in q (Richardson on the observed
    leading order); returns (limit, error_bar) where the error bar combines
    the fit covariance with the spread between the final two polynomial
    degrees.
    """
    q = np.asarray(q_values, dtype=float)
    v = np.asarray(estimates, dtype=float)
    if q.size != v.size or q.size < 2:
        raise DomainError("need matching q and estimate arrays, length >= 2")
    deg = min(degree, q.size - 1)
    w = None
    if std_errors is not None:
        se = np.maximum(np.asarray(std_errors, dtype=float), 1e-300)
        w = 1.0 / se
    coeff, cov = _polyfit_cov(q, v, deg, w)
    limit = coeff[-1]
    var = cov[-1, -1] if cov is not None else 0.0
    if deg >= 1:
        coeff_lo, _ = _polyfit_cov(q, v, deg - 1, w)
        spread = abs(limit - coeff_lo[-1])
    else:
        spread = 0.0
    return float(limit), float(math.sqrt(max(var, 0.0)) + spread)


def _polyfit_cov(x, y, deg, w):
    vander = np.vander(x, deg + 1)
    if w is not None:
        vw = vander * w[:, None]
        yw = y * w
    else:
        vw, yw = vander, y
    coeff, *_ = np.linalg.lstsq(vw, yw, rcond=None)
    try:
        cov = np.linalg.inv(vw.T @ vw)
    except np.linalg.LinAlgError:
        cov = None
    return coeff, cov


def mean_report(values, target: float, name: str, weights=None,
                sigma: float = THRESHOLDS.mc_sigma,
                thresholds: Thresholds = THRESHOLDS) -> TestReport:
    """CLT check: |mean - target| <= sigma * SE, with ESS accounting."""
    v = np.asarray(values, dtype=float)
    if weights is None:
        m = v.mean()
        se = v.std(ddof=1) / math.sqrt(v.size)
        ess = float(v.size)
    else:
        w = np.asarray(weights, dtype=float)
        m = float(np.sum(w * v) / np.sum(w))
        ess = effective_sample_size(w)
        resid = v - m
        se = math.sqrt(float(np.sum((w * resid) ** 2)) / float(np.sum(w)) ** 2)
        if se == 0.0:
            se = 1e-300
    z = abs(m - target) / max(se, 1e-300)
    underpowered = ess < thresholds.ess_min
    passed = z <= sigma and not underpowered
    return TestReport(name, float(z), passed,
                      ci=(float(m - sigma * se), float(m + sigma * se)),
                      n=int(v.size), ess=ess, threshold=sigma,
                      status="underpowered" if underpowered else "ok",
                      meta={"mean": float(m), "target": float(target),
                            "std_error": float(se)})


def residual_report(residual: float, tol: float, name: str) -> TestReport:
    return TestReport(name, float(abs(residual)), bool(abs(residual) <= tol),
                      threshold=tol)


def report_block_to_json(reports: Sequence[TestReport]) -> list:
    return [r.to_json() for r in reports]


def all_passed(reports: Sequence[TestReport]) -> bool:
    return all(r.passed for r in reports)
