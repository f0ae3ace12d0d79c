"""Subordinator models, exact path sampling, and stream-keyed randomness.

Supported families (drift coefficient ``kappa`` and jump structure):

* ``drift``                    X_t = kappa * t
* ``poisson``                  unit jumps at rate ``jump_rate``
* ``compound_poisson_drift``   drift plus jumps at rate ``jump_rate`` with a
                               parametric jump law
* ``stable``                   normalised so E[exp(-lam X_t)] = exp(-t lam^alpha)
* ``gamma``                    increments Gamma(shape*t, rate)

Finite-activity families can be sampled jump-exactly; every family can be
sampled on a grid with exactly distributed increments, so marginal laws are
exact at grid points and no truncation bias enters.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Optional

import numpy as np

from . import stablelaw
from .errors import DomainError, UnsupportedModeError

INFINITE_LIFETIME = math.inf


class Family(str, Enum):
    DRIFT = "drift"
    POISSON = "poisson"
    COMPOUND_POISSON_DRIFT = "compound_poisson_drift"
    STABLE = "stable"
    GAMMA = "gamma"


@dataclass(frozen=True)
class RngStream:
    """Counter-style random stream keyed by (seed, stream_id).

    The same (seed, stream_id) pair reproduces the same draw sequence no
    matter how streams are scheduled across threads, which is what makes
    parallel Monte Carlo byte-reproducible.
    """

    seed: int
    stream_id: int = 0

    def __post_init__(self):
        if self.stream_id < 0:
            raise DomainError("stream_id must be nonnegative")

    def generator(self) -> np.random.Generator:
        seq = np.random.SeedSequence(entropy=self.seed, spawn_key=(self.stream_id,))
        return np.random.Generator(np.random.Philox(seq))

    def batch_generator(self, batch_index: int) -> np.random.Generator:
        """Independent generator for one batch; keyed, never sequential."""
        seq = np.random.SeedSequence(
            entropy=self.seed, spawn_key=(self.stream_id, batch_index)
        )
        return np.random.Generator(np.random.Philox(seq))

    def child(self, k: int) -> "RngStream":
        """Derived stream for a sub-task, disjoint from low-numbered streams."""
        return RngStream(self.seed, (self.stream_id + 1) * 1_000_003 + k)


@dataclass(frozen=True)
class JumpLaw:
    """Parametric jump-size law on (0, inf) for finite-activity families.

    kind = "exponential" (mean 1/rate) or "constant" (all jumps equal
    ``value``).  Exponential jumps give an absolutely continuous compound
    part; constant jumps give a lattice-like one.
    """

    kind: str
    rate: float = 1.0
    value: float = 1.0

    def __post_init__(self):
        if self.kind not in ("exponential", "constant"):
            raise DomainError(f"unknown jump law kind {self.kind!r}")
        if self.kind == "exponential" and self.rate <= 0:
            raise DomainError("exponential jump rate must be positive")
        if self.kind == "constant" and self.value <= 0:
            raise DomainError("constant jump value must be positive")

    @property
    def mean(self) -> float:
        return 1.0 / self.rate if self.kind == "exponential" else self.value

    @property
    def absolutely_continuous(self) -> bool:
        return self.kind == "exponential"

    def laplace(self, lam):
        """E[exp(-lam J)], valid for complex lam with Re lam >= 0."""
        if self.kind == "exponential":
            return self.rate / (self.rate + lam)
        return np.exp(-lam * self.value)

    def sample(self, gen: np.random.Generator, size: int) -> np.ndarray:
        if self.kind == "exponential":
            return gen.standard_exponential(size) / self.rate
        return np.full(size, self.value)

    def to_json(self) -> dict:
        if self.kind == "exponential":
            return {"kind": "exponential", "rate": self.rate}
        return {"kind": "constant", "value": self.value}

    @classmethod
    def from_json(cls, doc: dict) -> "JumpLaw":
        return cls(**doc)


@dataclass(frozen=True)
class SubordinatorSpec:
    """Parametric subordinator model with closed-form Laplace exponent."""

    family: Family
    kappa: float = 0.0
    jump_rate: float = 0.0
    jump_law: Optional[JumpLaw] = None
    alpha: Optional[float] = None
    gamma_shape: Optional[float] = None
    gamma_rate: Optional[float] = None

    def __post_init__(self):
        fam = Family(self.family)
        object.__setattr__(self, "family", fam)
        if self.kappa < 0:
            raise DomainError("kappa must be nonnegative")
        if fam is Family.DRIFT:
            if self.kappa <= 0:
                raise DomainError("drift family needs kappa > 0")
        elif fam is Family.POISSON:
            if self.jump_rate <= 0:
                raise DomainError("poisson family needs jump_rate > 0")
            if self.kappa != 0:
                raise DomainError("poisson family has no drift; use compound_poisson_drift")
        elif fam is Family.COMPOUND_POISSON_DRIFT:
            if self.jump_rate <= 0:
                raise DomainError("compound_poisson_drift needs jump_rate > 0")
            if self.jump_law is None:
                object.__setattr__(self, "jump_law", JumpLaw("exponential", rate=1.0))
        elif fam is Family.STABLE:
            if self.alpha is None or not (0.0 < self.alpha < 1.0):
                raise DomainError("stable index alpha must lie strictly in (0, 1)")
        elif fam is Family.GAMMA:
            if not self.gamma_shape or self.gamma_shape <= 0 or not self.gamma_rate or self.gamma_rate <= 0:
                raise DomainError("gamma family needs positive shape and rate")

    # -- structure ----------------------------------------------------------

    @property
    def finite_activity(self) -> bool:
        return self.family in (Family.DRIFT, Family.POISSON, Family.COMPOUND_POISSON_DRIFT)

    @property
    def lattice(self) -> bool:
        """True when the renewal measure lives on a lattice (unit-jump Poisson)."""
        return self.family is Family.POISSON

    @property
    def has_potential_density(self) -> bool:
        """Absolute continuity of the potential measure on (0, inf)."""
        if self.family in (Family.DRIFT, Family.STABLE, Family.GAMMA):
            return True
        if self.family is Family.COMPOUND_POISSON_DRIFT:
            return self.kappa > 0 and self.jump_law.absolutely_continuous
        return False

    @property
    def mean_rate(self) -> float:
        """E[X_1]; inf for the stable family."""
        if self.family is Family.DRIFT:
            return self.kappa
        if self.family is Family.POISSON:
            return self.jump_rate
        if self.family is Family.COMPOUND_POISSON_DRIFT:
            return self.kappa + self.jump_rate * self.jump_law.mean
        if self.family is Family.GAMMA:
            return self.gamma_shape / self.gamma_rate
        return math.inf

    # -- serialisation -------------------------------------------------------

    def to_json(self) -> dict:
        doc = {"family": self.family.value}
        if self.family is Family.DRIFT:
            doc["kappa"] = self.kappa
        elif self.family is Family.POISSON:
            doc["jump_rate"] = self.jump_rate
        elif self.family is Family.COMPOUND_POISSON_DRIFT:
            doc.update(kappa=self.kappa, jump_rate=self.jump_rate,
                       jump_law=self.jump_law.to_json())
        elif self.family is Family.STABLE:
            doc["alpha"] = self.alpha
        elif self.family is Family.GAMMA:
            doc.update(gamma_shape=self.gamma_shape, gamma_rate=self.gamma_rate)
        return doc

    @classmethod
    def from_json(cls, doc) -> "SubordinatorSpec":
        if isinstance(doc, str):
            doc = json.loads(doc)
        doc = dict(doc)
        if "jump_law" in doc and doc["jump_law"] is not None:
            doc["jump_law"] = JumpLaw.from_json(doc["jump_law"])
        return cls(**doc)

    # convenience constructors used throughout the test-suite
    @classmethod
    def drift(cls, kappa: float) -> "SubordinatorSpec":
        return cls(Family.DRIFT, kappa=kappa)

    @classmethod
    def poisson(cls, rate: float) -> "SubordinatorSpec":
        return cls(Family.POISSON, jump_rate=rate)

    @classmethod
    def compound_poisson_drift(cls, kappa: float, rate: float,
                               jump_law: Optional[JumpLaw] = None) -> "SubordinatorSpec":
        return cls(Family.COMPOUND_POISSON_DRIFT, kappa=kappa, jump_rate=rate,
                   jump_law=jump_law or JumpLaw("exponential", rate=1.0))

    @classmethod
    def stable(cls, alpha: float) -> "SubordinatorSpec":
        return cls(Family.STABLE, alpha=alpha)

    @classmethod
    def gamma(cls, shape: float, rate: float) -> "SubordinatorSpec":
        return cls(Family.GAMMA, gamma_shape=shape, gamma_rate=rate)


@dataclass
class PathSample:
    """A simulated trajectory on its recorded skeleton.

    ``times`` is strictly increasing; ``values`` holds the state at each
    recorded time.  Between recorded times the path moves linearly at slope
    ``drift`` (exact for finite-activity families; grid paths record the
    state at every grid node and use drift 0).  A killed path has a finite
    ``lifetime`` equal to its last recorded time; +inf marks an unkilled
    path, never NaN.
    """

    times: np.ndarray
    values: np.ndarray
    lifetime: float = INFINITE_LIFETIME
    weight: float = 1.0
    killed: bool = False
    drift: float = 0.0

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        if self.times.ndim != 1 or self.times.shape != self.values.shape:
            raise DomainError("times and values must be 1-d arrays of equal length")
        if self.times.size == 0:
            raise DomainError("a path needs at least one recorded point")
        if self.times.size > 1 and not np.all(np.diff(self.times) > 0):
            raise DomainError("times must be strictly increasing")
        if self.weight < 0:
            raise DomainError("weight must be nonnegative")
        if math.isnan(self.lifetime):
            raise DomainError("lifetime must be a number or +inf, never NaN")
        if self.killed:
            if not math.isfinite(self.lifetime):
                raise DomainError("killed paths need a finite lifetime")
            if self.lifetime > self.times[-1] + 1e-12:
                raise DomainError("lifetime must not exceed the last recorded time")

    @property
    def horizon(self) -> float:
        return float(self.times[-1])

    def alive_at(self, t: float) -> bool:
        return t < self.lifetime

    def value_at(self, t: float) -> float:
        """State at time t in [times[0], horizon], before any killing."""
        if t < self.times[0] - 1e-12 or t > self.horizon + 1e-12:
            raise DomainError(f"t={t} outside recorded range")
        if self.killed and t >= self.lifetime:
            raise DomainError("path is dead at the requested time")
        i = int(np.searchsorted(self.times, t, side="right") - 1)
        i = max(i, 0)
        return float(self.values[i] + self.drift * (t - self.times[i]))

    def values_at(self, ts: np.ndarray) -> np.ndarray:
        ts = np.asarray(ts, dtype=float)
        idx = np.clip(np.searchsorted(self.times, ts, side="right") - 1, 0, None)
        return self.values[idx] + self.drift * (ts - self.times[idx])


def paths_to_csv(paths, fileobj, header_comment: Optional[str] = None) -> None:
    """Write paths as CSV columns (path, t, x, weight, killed)."""
    if header_comment:
        for line in header_comment.splitlines():
            fileobj.write(f"# {line}\n")
    fileobj.write("path,t,x,weight,killed\n")
    for i, p in enumerate(paths):
        k = int(p.killed)
        for t, x in zip(p.times, p.values):
            fileobj.write(f"{i},{t!r},{x!r},{p.weight!r},{k}\n")


# ---------------------------------------------------------------------------
# Laplace exponent
# ---------------------------------------------------------------------------

def laplace_exponent(spec: SubordinatorSpec, lam: float) -> float:
    """phi(lam) = -log E[exp(-lam X_1)], in closed form per family."""
    if lam < 0:
        raise DomainError("lambda must be nonnegative")
    return float(np.real(laplace_exponent_analytic(spec, complex(lam))))


def laplace_exponent_analytic(spec: SubordinatorSpec, s):
    """phi extended to complex s with Re s >= 0 (used by transform inversion)."""
    s = np.asarray(s, dtype=complex)
    fam = spec.family
    if fam is Family.DRIFT:
        return spec.kappa * s
    if fam is Family.POISSON:
        return spec.jump_rate * (1.0 - np.exp(-s))
    if fam is Family.COMPOUND_POISSON_DRIFT:
        return spec.kappa * s + spec.jump_rate * (1.0 - spec.jump_law.laplace(s))
    if fam is Family.STABLE:
        return s ** spec.alpha
    if fam is Family.GAMMA:
        return spec.gamma_shape * np.log(1.0 + s / spec.gamma_rate)
    raise UnsupportedModeError(f"no Laplace exponent for {fam}")


# ---------------------------------------------------------------------------
# Increment and path sampling
# ---------------------------------------------------------------------------

def sample_stable_increment(alpha: float, t: float, rng: RngStream) -> float:
    """One-sided stable variate with E[exp(-lam . )] = exp(-t lam^alpha)."""
    if not (0.0 < alpha < 1.0):
        raise DomainError("alpha must lie strictly in (0, 1)")
    if t <= 0:
        raise DomainError("t must be positive")
    gen = rng.generator() if isinstance(rng, RngStream) else rng
    return float(t ** (1.0 / alpha) * stablelaw.sample(alpha, 1, gen)[0])


def sample_increments(spec: SubordinatorSpec, dt: float, size: int,
                      gen: np.random.Generator) -> np.ndarray:
    """Exactly distributed increments of X over windows of length dt."""
    fam = spec.family
    if fam is Family.DRIFT:
        return np.full(size, spec.kappa * dt)
    if fam is Family.POISSON:
        return gen.poisson(spec.jump_rate * dt, size).astype(float)
    if fam is Family.COMPOUND_POISSON_DRIFT:
        counts = gen.poisson(spec.jump_rate * dt, size)
        total = int(counts.sum())
        out = np.full(size, spec.kappa * dt)
        if total:
            sizes = spec.jump_law.sample(gen, total)
            starts = np.minimum(np.r_[0, np.cumsum(counts)[:-1]], total - 1)
            sums = np.add.reduceat(sizes, starts)
            sums[counts == 0] = 0.0
            out += sums
        return out
    if fam is Family.STABLE:
        return dt ** (1.0 / spec.alpha) * stablelaw.sample(spec.alpha, size, gen)
    if fam is Family.GAMMA:
        return gen.gamma(spec.gamma_shape * dt, 1.0 / spec.gamma_rate, size)
    raise UnsupportedModeError(f"cannot sample increments for {fam}")


def sample_path(spec: SubordinatorSpec, horizon: float, mode: str,
                rng, *, dt: Optional[float] = None, x0: float = 0.0) -> PathSample:
    """Simulate one trajectory up to ``horizon``.

    mode "jump_exact" records every jump time and size exactly and is only
    available for finite-activity families; mode "grid" records the exact
    state at multiples of dt.
    """
    if horizon <= 0:
        raise DomainError("horizon must be positive")
    gen = rng.generator() if isinstance(rng, RngStream) else rng
    if mode == "jump_exact":
        if not spec.finite_activity:
            raise UnsupportedModeError(
                f"jump-exact sampling is not available for {spec.family.value}")
        return _sample_jump_exact(spec, horizon, gen, x0)
    if mode == "grid":
        if dt is None or dt <= 0:
            raise DomainError("grid mode needs dt > 0")
        n = max(int(round(horizon / dt)), 1)
        times = np.arange(n + 1) * dt
        incs = sample_increments(spec, dt, n, gen)
        values = x0 + np.concatenate([[0.0], np.cumsum(incs)])
        return PathSample(times, values)
    raise UnsupportedModeError(f"unknown mode {mode!r}")


def _sample_jump_exact(spec, horizon, gen, x0):
    kappa = spec.kappa if spec.family is not Family.POISSON else 0.0
    if spec.family is Family.DRIFT:
        times = np.array([0.0, horizon])
        values = x0 + np.array([0.0, kappa * horizon])
        return PathSample(times, values, drift=kappa)
    rate = spec.jump_rate
    n = gen.poisson(rate * horizon)
    jt = np.sort(gen.uniform(0.0, horizon, n))
    if spec.family is Family.POISSON:
        sizes = np.ones(n)
    else:
        sizes = spec.jump_law.sample(gen, n)
    times = np.concatenate([[0.0], jt, [horizon]])
    # value recorded at each time: post-jump state including drift
    vals = np.concatenate([[0.0], np.cumsum(sizes)])
    values = x0 + kappa * times + np.concatenate([vals, [vals[-1]]])
    keep = np.concatenate([[True], np.diff(times) > 0])
    return PathSample(times[keep], values[keep], drift=kappa)


def first_passage_time(path: PathSample, level: float) -> float:
    """inf{t : X_t > level} along a recorded path; +inf if never reached.

    Exact for jump-exact paths (drift crossings are solved in closed form);
    for grid paths the crossing is located at grid resolution.
    """
    v = path.values
    above = v > level
    if not above.any():
        if path.drift > 0 and v[-1] + 0 < level:
            return math.inf
        return math.inf
    j = int(np.argmax(above))
    if j == 0:
        return float(path.times[0])
    if path.drift > 0:
        # the path may creep over the level between records j-1 and j
        t_creep = path.times[j - 1] + (level - v[j - 1]) / path.drift
        if v[j - 1] + path.drift * (path.times[j] - path.times[j - 1]) > level and t_creep < path.times[j]:
            if t_creep >= path.times[j - 1]:
                return float(t_creep)
    return float(path.times[j])
