"""Annuli around c, the induced maps f^{S_k} on them, and Monte Carlo over levels.

Level k >= 1 is the annulus A_k = {dist_u[k+1] <= |x - c| < dist_u[k]}; A_0
is empty because u_1 is the reflection of u_0.  The core (u_K, u_K hat) is
deeper than the computed nest and is treated as absorbing.  Points outside
(u_1, u_1 hat) get level 0; an induced step from level 0 is the first entry
into (u_1, u_1 hat).
"""
from __future__ import annotations

import bisect
import math
from collections import Counter
from dataclasses import dataclass, field

import numpy as np
from gmpy2 import mpfr

from .distortion import PrecriticalError, _uniform_in, monotone_branch
from .fibmap import FibMap, IntervalR, NonMonotoneError, _exponent
from .nest import NestLevel
from .real import Real, at_map_precision, bits_of, short_decimal as _dec, to_decimal, working
from .walk import SequencePair, ScalingConstants, fit_constants

K0 = 2
OUTSIDE = 0
# first entry into the nest from level 0 gives up after this many iterates
FIRST_ENTRY_LIMIT = 100_000


class NestingError(ValueError):
    pass


class OutsidePartitionError(ValueError):
    pass


class InducedStepViolation(AssertionError):
    pass


@dataclass(frozen=True)
class Annulus:
    k: int
    S_k: int
    inner: Real  # dist_u[k + 1]
    outer: Real  # dist_u[k]
    side: int  # side of u_k; I_k sits there and its reflection on the other side

    @property
    def component_length(self) -> Real:
        with working(bits_of(self.inner, self.outer)):
            return self.outer - self.inner

    @property
    def length(self) -> Real:
        with working(bits_of(self.inner, self.outer)):
            return 2 * self.component_length

    def components(self) -> tuple[IntervalR, IntervalR]:
        """(I_k, I_k hat) as closed intervals."""
        with working(bits_of(self.inner, self.outer)):
            c = mpfr("0.5")
            right = IntervalR(c + self.inner, c + self.outer)
            left = IntervalR(c - self.outer, c - self.inner)
        return (right, left) if self.side > 0 else (left, right)


@dataclass
class AnnulusPartition:
    levels: list[Annulus]
    core_radius: Real
    K: int
    bits: int
    _verified: dict = field(default_factory=dict, repr=False)

    @property
    def depth(self) -> int:
        return self.K

    def annulus(self, k: int) -> Annulus:
        return self.levels[k - 1]

    def lengths(self) -> list:
        return [a.length for a in self.levels]

    def top_radius(self) -> Real:
        return self.levels[0].outer

    def level_of(self, x) -> int:
        """0 outside (u_1, u_1 hat), K in the core, otherwise the annulus index."""
        with working(self.bits):
            r = abs(x - mpfr("0.5"))
        if r >= self.top_radius():
            return OUTSIDE
        if r < self.core_radius:
            return self.K
        # outers decrease with k; find the deepest annulus whose outer exceeds r
        neg = self._neg_outers()
        return bisect.bisect_left(neg, -r)

    def _neg_outers(self):
        if "_neg" not in self._verified:
            self._verified["_neg"] = [-a.outer for a in self.levels]
        return self._verified["_neg"]

    def telescoping_gap(self) -> Real:
        with working(self.bits):
            total = sum((a.length for a in self.levels), mpfr(0)) + 2 * self.core_radius
            return abs(total - 2 * self.top_radius())

    def annulus_ratios(self) -> list:
        """|A_k| / |(u_{k+1}, u_{k+1} hat)| per level."""
        with working(self.bits):
            return [a.length / (2 * a.inner) for a in self.levels]


def build_annuli(nest: list[NestLevel], bits: int | None = None) -> AnnulusPartition:
    if len(nest) < 5:
        raise NestingError("need nest depth at least 4")
    K = len(nest) - 1
    bits = bits or max(lv.dist_u.precision for lv in nest)
    radii = [lv.dist_u for lv in nest]
    levels = []
    for k in range(1, K):
        if not radii[k + 1] < radii[k]:
            raise NestingError(f"(u_{k + 1}, u_{k + 1} hat) is not strictly inside (u_{k}, u_{k} hat)")
        side = 1 if nest[k].u > mpfr("0.5") else -1
        levels.append(Annulus(k, nest[k].S_n, radii[k + 1], radii[k], side))
    return AnnulusPartition(levels, radii[K], K, bits)


@dataclass(frozen=True)
class InducedStep:
    x_next: Real
    k_from: int
    k_to: int
    iterate_used: int


def _verify_monotone(f: FibMap, part: AnnulusPartition, k: int):
    """f^{S_k} is a diffeomorphism on each component of A_k (checked once per level)."""
    key = ("mono", k)
    if key in part._verified:
        return
    ann = part.annulus(k)
    for comp in ann.components():
        with f.working():
            mid = (comp.lo + comp.hi) / 2
        try:
            branch = monotone_branch(f, ann.S_k, mid)
        except PrecriticalError as exc:
            raise NonMonotoneError(f"midpoint of A_{k} is precritical") from exc
        slack = comp.length * mpfr(2) ** (-(f.bits // 2))
        if branch.lo > comp.lo + slack or branch.hi < comp.hi - slack:
            raise NonMonotoneError(f"f^{ann.S_k} is not monotone on a component of A_{k}")
    part._verified[key] = True


@at_map_precision
def first_entry(f: FibMap, part: AnnulusPartition, x):
    """(first point of the forward orbit inside (u_1, u_1 hat), number of iterates)."""
    r = part.top_radius()
    c = mpfr("0.5")
    e = _exponent(f.ell)
    for n in range(1, FIRST_ENTRY_LIMIT + 1):
        x = f._f(x, e)
        if abs(x - c) < r:
            return x, n
    raise OutsidePartitionError("orbit did not enter the nest")


@at_map_precision
def induced_step(f: FibMap, part: AnnulusPartition, x, allow_outside: bool = False) -> InducedStep:
    k = part.level_of(x)
    if k == part.K:
        raise OutsidePartitionError("x lies in the central core")
    if k == OUTSIDE:
        if not allow_outside:
            raise OutsidePartitionError("x lies outside the nest")
        y, n = first_entry(f, part, x)
        return InducedStep(y, OUTSIDE, part.level_of(y), n)
    _verify_monotone(f, part, k)
    S = part.annulus(k).S_k
    y = f.iterate(x, S)
    k_to = part.level_of(y)
    if k_to < k - 2:
        raise InducedStepViolation(f"induced step from level {k} landed at level {k_to}")
    return InducedStep(y, k, k_to, S)


def sample_annulus(f: FibMap, part: AnnulusPartition, k: int, rng: np.random.Generator):
    """Lebesgue-uniform point of A_k at 64-bit resolution."""
    ann = part.annulus(k)
    comps = ann.components()
    with f.working():
        comp = comps[int(rng.integers(0, 2))]
        return _uniform_in(rng, comp.lo, comp.hi)


def _uniform_top(f: FibMap, part: AnnulusPartition, rng):
    """Lebesgue-uniform point of (u_1, u_1 hat) minus the core."""
    c = mpfr("0.5")
    with f.working():
        while True:
            r = _uniform_in(rng, part.core_radius, part.top_radius())
            x = c + r if rng.integers(0, 2) else c - r
            if part.level_of(x) not in (OUTSIDE, part.K):
                return x


@dataclass
class EmpiricalTransitions:
    r: int
    counts: dict
    samples: int
    absorbed: int = 0
    resampled: int = 0
    k0: int = K0

    def __post_init__(self):
        if sum(self.counts.values()) + self.absorbed_excluded != self.samples:
            raise ValueError("counts do not add up to the sample size")
        if self.counts and min(self.counts) < self.r - 2:
            raise InducedStepViolation(f"target below r - 2 from level {self.r}")

    @property
    def absorbed_excluded(self) -> int:
        return self.absorbed

    @property
    def tallied(self) -> int:
        return sum(self.counts.values())

    def nu_hat(self) -> list[float]:
        """Frequencies nu_1, nu_2, ... re-indexed by i = target - r + k0 + 1."""
        if not self.tallied:
            return []
        top = max(self.counts) - self.r + self.k0 + 1
        out = [0.0] * top
        for target, n in self.counts.items():
            out[target - self.r + self.k0] = n / self.tallied
        return out

    def m1(self) -> float:
        return math.fsum(i * p for i, p in enumerate(self.nu_hat(), start=1))

    def mean_jump(self) -> float:
        if not self.tallied:
            return float("nan")
        return math.fsum((t - self.r) * n for t, n in self.counts.items()) / self.tallied

    def jump_stderr(self) -> float:
        n = self.tallied
        if n < 2:
            return float("inf")
        mean = self.mean_jump()
        var = math.fsum((t - self.r - mean) ** 2 * c for t, c in self.counts.items()) / (n - 1)
        return math.sqrt(var / n)

    def to_json(self) -> dict:
        return {
            "r": self.r,
            "samples": self.samples,
            "counts": {str(k): v for k, v in sorted(self.counts.items())},
            "absorbed_excluded": self.absorbed,
            "resampled": self.resampled,
            "nu_hat": [_dec(p) for p in self.nu_hat()],
            "m1": _dec(self.m1()),
            "mean_jump": _dec(self.mean_jump()),
        }


@at_map_precision
def estimate_transitions(f: FibMap, part: AnnulusPartition, r: int, samples: int, seed: int,
                         warmup: int = 0, k0: int = K0) -> EmpiricalTransitions:
    """Tally the level reached by one induced step from Lebesgue-uniform points of A_r.

    With ``warmup`` > 0 the points are first pushed forward that many induced
    steps and only those sitting in A_r again are tallied, which samples the
    normalized pushforward measure restricted to A_r.
    """
    if not 1 <= r < part.K:
        raise OutsidePartitionError(f"level {r} is not inside the computed nest")
    if samples < 1:
        raise ValueError("samples must be positive")
    rng = np.random.Generator(np.random.Philox(seed))
    exclude_absorbed = r >= part.K - 2
    counts: Counter = Counter()
    absorbed = resampled = taken = 0
    while taken < samples:
        x = sample_annulus(f, part, r, rng)
        if part.level_of(x) != r:
            resampled += 1
            continue
        for _ in range(warmup):
            if part.level_of(x) in (OUTSIDE, part.K):
                break
            x = induced_step(f, part, x).x_next
        if warmup and part.level_of(x) != r:
            continue
        step = induced_step(f, part, x)
        taken += 1
        if step.k_to == part.K and exclude_absorbed:
            absorbed += 1
        else:
            counts[step.k_to] += 1
    return EmpiricalTransitions(r, dict(counts), samples, absorbed, resampled, k0)


def empirical_pair(part: AnnulusPartition, trans: EmpiricalTransitions) -> SequencePair:
    """(a, nu) with a_i = |A_{r+i-k0-1}| from the partition and nu from the tally.

    The tail of a continues with the ratio of the last two lengths; nu stops
    after its largest observed index.
    """
    start = trans.r - trans.k0 - 1
    if start < 1:
        raise OutsidePartitionError(f"level {trans.r} is too shallow for the re-indexing")
    with working(part.bits):
        a = [part.annulus(k).length for k in range(start, part.K)]
        ratio = a[-1] / a[-2]
    nu = trans.nu_hat()
    return SequencePair(tuple(a), tuple(nu), a_tail=ratio, nu_tail=0)


@dataclass
class BasinReport:
    ell: Real
    K: int
    samples: int
    horizon: int
    seed: int
    r0: int
    initial: np.ndarray
    terminal: np.ndarray
    min_level: np.ndarray
    max_level: np.ndarray
    absorbed_at: np.ndarray  # step index of absorption, -1 if never
    returned: np.ndarray  # level <= r0 at some step >= 1
    jumps: list

    @property
    def absorbed(self) -> np.ndarray:
        return self.absorbed_at >= 0

    def drift_mean(self) -> float:
        flat = [j for walker in self.jumps for j in walker]
        return float(np.mean(flat)) if flat else 0.0

    def drift_stderr(self) -> float:
        flat = [j for walker in self.jumps for j in walker]
        return float(np.std(flat, ddof=1) / math.sqrt(len(flat))) if len(flat) > 1 else float("inf")

    def summary(self) -> dict:
        return {
            "ell": to_decimal(self.ell),
            "K": self.K,
            "samples": self.samples,
            "horizon": self.horizon,
            "seed": self.seed,
            "r0": self.r0,
            "drift_mean": _dec(self.drift_mean()),
            "drift_stderr": _dec(self.drift_stderr()),
            "escape_fraction": _dec(np.mean(self.absorbed)) if self.samples else "0.0",
            "recurrence_fraction": _dec(np.mean(self.returned)) if self.samples else "0.0",
            "median_initial_level": _dec(np.median(self.initial)) if self.samples else "0.0",
            "median_terminal_level": _dec(np.median(self.terminal)) if self.samples else "0.0",
            "min_level_quantiles": [_dec(q) for q in np.quantile(self.min_level, [0, 0.5, 1])],
            "max_level_quantiles": [_dec(q) for q in np.quantile(self.max_level, [0, 0.5, 1])],
        }


@at_map_precision
def montecarlo_basin(f: FibMap, part: AnnulusPartition, samples: int, horizon: int, seed: int,
                     r0: int = 3, start_level: int | None = None) -> BasinReport:
    """Run the level process of Lebesgue-uniform starting points for ``horizon`` induced steps.

    Starts are uniform in (u_1, u_1 hat) minus the core, or in A_start_level.
    A walker stops once it enters the core (absorbed).
    """
    rng = np.random.Generator(np.random.Philox(seed))
    starts = [sample_annulus(f, part, start_level, rng) if start_level else _uniform_top(f, part, rng)
              for _ in range(samples)]
    initial = np.array([part.level_of(x) for x in starts], dtype=np.int64)
    terminal = initial.copy()
    lo, hi = initial.copy(), initial.copy()
    absorbed_at = np.full(samples, -1, dtype=np.int64)
    returned = np.zeros(samples, dtype=bool)
    jumps = []
    for w, x in enumerate(starts):
        k = int(initial[w])
        walker = []
        for t in range(1, horizon + 1):
            step = induced_step(f, part, x, allow_outside=True)
            walker.append(step.k_to - step.k_from)
            x, k = step.x_next, step.k_to
            lo[w], hi[w] = min(lo[w], k), max(hi[w], k)
            if k <= r0:
                returned[w] = True
            if k == part.K:
                absorbed_at[w] = t
                break
        terminal[w] = k
        jumps.append(walker)
    return BasinReport(f.ell, part.K, samples, horizon, seed, r0, initial, terminal, lo, hi,
                       absorbed_at, returned, jumps)


def constants_for(pair: SequencePair, d: int = 0) -> ScalingConstants:
    return fit_constants(pair, d)
