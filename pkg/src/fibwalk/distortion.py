"""Cross-ratio distortion, the two-interval estimate and Koebe checks.

Interval images are always computed from endpoint orbits, with a check at
every step that the image interval does not contain c.  The distortion
factor coming from non-negative Schwarzian is taken to be 1 since the
family has Sf < 0.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from gmpy2 import mpfr

from .fibmap import FibMap, IntervalR, NonMonotoneError
from .real import PrecisionExhausted, Real, at_map_precision, bits_of, to_decimal, working


class DegenerateError(ValueError):
    pass


class OrderingError(ValueError):
    pass


class PrecriticalError(ValueError):
    pass


class KoebePreconditionError(ValueError):
    pass


@dataclass(frozen=True)
class CrossConfig:
    """Four ordered points t0 < j0 < j1 < t1: j = (j0, j1) sits inside t = (t0, t1)."""

    t: IntervalR
    j: IntervalR

    def __post_init__(self):
        if not (self.t.lo < self.j.lo and self.j.hi < self.t.hi):
            raise DegenerateError("j must lie strictly inside t")

    @property
    def points(self):
        return (self.t.lo, self.j.lo, self.j.hi, self.t.hi)

    @property
    def l(self) -> Real:
        return self.j.lo - self.t.lo

    @property
    def r(self) -> Real:
        return self.t.hi - self.j.hi


@dataclass(frozen=True)
class DistortionRecord:
    n: int
    B_value: Real
    sum_lengths: Real
    max_length: Real

    def row(self) -> dict:
        return {
            "n": self.n,
            "B_value": to_decimal(self.B_value, 64),
            "sum_lengths": to_decimal(self.sum_lengths, 64),
            "max_length": to_decimal(self.max_length, 64),
        }


def cross_ratio_points(p0, p1, p2, p3) -> Real:
    """|t||j| / (|l||r|) for t = [p0, p3], j = [p1, p2], in either orientation."""
    with working(bits_of(p0, p1, p2, p3)):
        t, j = abs(p3 - p0), abs(p2 - p1)
        l, r = abs(p1 - p0), abs(p3 - p2)
        if l == 0 or r == 0 or j == 0:
            raise DegenerateError("cross-ratio needs l, j and r nonempty")
        return t * j / (l * r)


def cross_ratio(config: CrossConfig) -> Real:
    return cross_ratio_points(*config.points)


def _check_not_straddling(f, a, b, step):
    # endpoints of maximal branches land on c up to rounding; allow that
    c = mpfr("0.5")
    eps = mpfr(2) ** (-(f.bits // 2))
    if min(a, b) < c - eps and c + eps < max(a, b):
        raise NonMonotoneError(f"image of t contains c after {step} steps")


def _orbits(f, points, n):
    """Forward orbits of several points with a monotonicity check on the hull."""
    pts = list(points)
    hist = [pts]
    for i in range(n):
        _check_not_straddling(f, min(pts), max(pts), i)
        pts = [f.eval(p) for p in pts]
        hist.append(pts)
    return hist


@at_map_precision
def cross_ratio_distortion(f, n: int, config: CrossConfig) -> DistortionRecord:
    hist = _orbits(f, config.points, n)
    lengths = [abs(h[3] - h[0]) for h in hist]
    B = cross_ratio_points(*hist[-1]) / cross_ratio(config)
    return DistortionRecord(n, B, sum(lengths[:n], mpfr(0)), max(lengths))


@at_map_precision
def orbit_length_sum(f, n: int, t: IntervalR):
    """(sum of |f^i t| for i < n, max of |f^i t| for i <= n)."""
    a, b = t.lo, t.hi
    total, biggest = mpfr(0), abs(b - a)
    for _ in range(n):
        total += abs(b - a)
        a, b = f.eval(a), f.eval(b)
        biggest = max(biggest, abs(b - a))
    return total, biggest


@dataclass(frozen=True)
class DoubcResult:
    lhs: Real
    rhs_lower: Real
    rhs_upper: Real
    passed: bool


@at_map_precision
def doubc_check(f, n: int, config1: CrossConfig, config2: CrossConfig,
                rel_tol=mpfr(2) ** -60) -> DoubcResult:
    if config1.t != config2.t:
        raise OrderingError("both configurations must share t")
    t = config1.t
    j1, j2 = config1.j, config2.j
    if not j1.hi <= j2.lo:
        raise OrderingError("j1 must lie to the left of j2 without overlap")
    pts = [t.lo, j1.lo, j1.hi, j2.lo, j2.hi, t.hi]
    img = _orbits(f, pts, n)[-1]
    if img[0] > img[-1]:
        # orientation reversed: mirror so that left/right labels still match
        img = [-p for p in img]
    T0, A1, B1, A2, B2, T1 = img
    J1, J2 = B1 - A1, B2 - A2
    L1, L2 = A1 - T0, A2 - T0
    R1, R2 = T1 - B1, T1 - B2
    lhs = (j1.length / J1) * (J2 / j2.length)
    lower = (J2 + R2) * R2 / ((J1 + R1) * R1)
    upper = L2 * (L2 + J2) / (L1 * (L1 + J1))
    ok = lower * (1 - rel_tol) <= lhs <= upper * (1 + rel_tol)
    return DoubcResult(lhs, lower, upper, ok)


def chebyshev_points(interval: IntervalR, m: int) -> list:
    """m Chebyshev nodes inside the interval plus both endpoints.

    Call at the working precision of the interval.
    """
    a, b = interval.lo, interval.hi
    mid, half = (a + b) / 2, (b - a) / 2
    nodes = [mid - half * mpfr(math.cos((2 * k + 1) * math.pi / (2 * m))) for k in range(m)]
    return [a] + nodes + [b]


@dataclass(frozen=True)
class KoebeResult:
    ratio: Real
    bound: Real
    passed: bool


@at_map_precision
def koebe_check(f, n: int, j: IntervalR, t: IntervalR, tau, samples: int = 1024) -> KoebeResult:
    tau = mpfr(tau)
    if not (t.lo <= j.lo and j.hi <= t.hi):
        raise KoebePreconditionError("j must lie inside t")
    img = _orbits(f, [t.lo, j.lo, j.hi, t.hi], n)[-1]
    lo_end, hi_end = sorted([img[0], img[3]])
    jlo, jhi = sorted([img[1], img[2]])
    J = jhi - jlo
    if jlo - lo_end < tau * J or hi_end - jhi < tau * J:
        raise KoebePreconditionError("image of t does not contain a tau-scaled neighbourhood")
    derivs = [abs(f.deriv_iterate(x, n)) for x in chebyshev_points(j, samples)]
    ratio = max(derivs) / min(derivs)
    bound = ((1 + tau) / tau) ** 2
    return KoebeResult(ratio, bound, ratio <= bound * (1 + mpfr(2) ** -20))


@at_map_precision
def monotone_branch(f: FibMap, n: int, x) -> IntervalR:
    """Maximal interval around x on which f^n is a diffeomorphism.

    Endpoint images are carried forward; whenever the image interval would
    swallow c it is clipped there and the clip point pulled back along the
    branches visited by x.
    """
    c = mpfr("0.5")
    lo, hi = mpfr(0), mpfr(1)
    a, b = lo, hi
    sides = []
    xj = x
    for j in range(n):
        try:
            s = f.side(xj)
        except PrecisionExhausted as exc:
            raise PrecriticalError(f"x is precritical of order {j}") from exc
        if min(a, b) < c < max(a, b):
            w = f.pullback(c, sides)
            # keep the part of the image on the same side as f^j(x)
            if (a > c) == (s > 0):
                hi, b = w, c
            else:
                lo, a = w, c
        sides.append(s)
        a, b, xj = f.eval(a), f.eval(b), f.eval(xj)
    return IntervalR(lo, hi, closed=False)


# random configurations ---------------------------------------------------


def _uniform_in(rng: np.random.Generator, lo, hi):
    """Uniform point of (lo, hi) at 64-bit resolution, never an endpoint."""
    # call inside a working() block
    u = (mpfr(int(rng.integers(0, 2**63))) + mpfr("0.5")) / mpfr(2) ** 63
    return lo + (hi - lo) * u


@at_map_precision
def random_branch(f: FibMap, rng: np.random.Generator, n_max: int = 40):
    """A random (n, T) with T a maximal monotone branch of f^n."""
    while True:
        n = int(rng.integers(1, n_max + 1))
        x = _uniform_in(rng, mpfr(0), mpfr(1))
        try:
            return n, monotone_branch(f, n, x)
        except PrecriticalError:
            continue


@at_map_precision
def random_config(f: FibMap, rng: np.random.Generator, n_max: int = 40):
    n, T = random_branch(f, rng, n_max)
    p = sorted(_uniform_in(rng, T.lo, T.hi) for _ in range(4))
    return n, CrossConfig(IntervalR(p[0], p[3]), IntervalR(p[1], p[2]))


@at_map_precision
def random_doubc_pair(f: FibMap, rng: np.random.Generator, n_max: int = 40):
    n, T = random_branch(f, rng, n_max)
    p = sorted(_uniform_in(rng, T.lo, T.hi) for _ in range(6))
    t = IntervalR(p[0], p[5])
    return n, CrossConfig(t, IntervalR(p[1], p[2])), CrossConfig(t, IntervalR(p[3], p[4]))


@at_map_precision
def koebe_config(f: FibMap, n: int, T: IntervalR, tau, rng: np.random.Generator, x=None):
    """Random (j, t) inside the branch T of f^n with a tau-collar around f^n(j).

    The image f^n(T) is trimmed by a tiny relative amount, J is placed inside
    with collars of at least tau|J|, and everything is pulled back along the
    branch of x (default: the midpoint of T).
    """
    tau = mpfr(tau)
    x = (T.lo + T.hi) / 2 if x is None else x
    sides = [f.side(p) for p in f.orbit(x, n)[:n]]
    A, B = f.iterate(T.lo, n), f.iterate(T.hi, n)
    lo, hi = min(A, B), max(A, B)
    trim = (hi - lo) * mpfr(2) ** -30
    lo, hi = lo + trim, hi - trim
    span = hi - lo
    share = mpfr("0.3") + mpfr("0.7") * _uniform_in(rng, mpfr(0), mpfr(1))
    J = span * share / (1 + 2 * tau)
    slack = span - J * (1 + 2 * tau)
    start = lo + tau * J + slack * _uniform_in(rng, mpfr(0), mpfr(1))
    j_ends = sorted(f.pullback(y, sides) for y in (start, start + J))
    t_ends = sorted(f.pullback(y, sides) for y in (lo, hi))
    return IntervalR(j_ends[0], j_ends[1]), IntervalR(t_ends[0], t_ends[1])


@at_map_precision
def collar_ratio(f, n: int, j: IntervalR, t: IntervalR) -> Real:
    """Largest tau for which f^n(t) is a tau-scaled neighbourhood of f^n(j)."""
    img = _orbits(f, [t.lo, j.lo, j.hi, t.hi], n)[-1]
    lo_end, hi_end = sorted([img[0], img[3]])
    jlo, jhi = sorted([img[1], img[2]])
    return min(jlo - lo_end, hi_end - jhi) / (jhi - jlo)


# batches ------------------------------------------------------------------


B_FLOOR = mpfr("0.999999999999", 256)


@dataclass
class DistortionBatch:
    records: list
    doubc: list
    koebe: list  # (tau, n, KoebeResult)

    @property
    def min_B(self):
        return min(r.B_value for r in self.records) if self.records else None

    @property
    def passed(self) -> bool:
        return (all(r.B_value >= B_FLOOR for r in self.records)
                and all(d.passed for d in self.doubc)
                and all(k.passed for _, _, k in self.koebe))

    def summary(self) -> dict:
        with working(max((bits_of(k.ratio, k.bound) for _, _, k in self.koebe), default=53)):
            worst = max((k.ratio / k.bound for _, _, k in self.koebe), default=None)
        return {
            "cross_ratio_samples": len(self.records),
            "min_B": to_decimal(self.min_B, 64) if self.records else None,
            "B_failures": sum(r.B_value < B_FLOOR for r in self.records),
            "doubc_samples": len(self.doubc),
            "doubc_failures": sum(not d.passed for d in self.doubc),
            "koebe_samples": len(self.koebe),
            "koebe_failures": sum(not k.passed for _, _, k in self.koebe),
            "koebe_worst_ratio_to_bound": to_decimal(worst, 64) if worst is not None else None,
            "passed": self.passed,
        }


def distortion_batch(f: FibMap, samples: int, seed: int, n_max: int = 40,
                     koebe_samples: int = 10, taus=("0.5", "1", "2")) -> DistortionBatch:
    """Random cross-ratio, two-interval and Koebe checks from one seeded stream."""
    rng = np.random.Generator(np.random.Philox(seed))
    records = []
    for _ in range(samples):
        n, cfg = random_config(f, rng, n_max)
        records.append(cross_ratio_distortion(f, n, cfg))
    doubc = []
    for _ in range(samples):
        n, c1, c2 = random_doubc_pair(f, rng, n_max)
        doubc.append(doubc_check(f, n, c1, c2))
    koebe = []
    for tau in taus:
        for _ in range(koebe_samples):
            n, T = random_branch(f, rng, n_max)
            j, t = koebe_config(f, n, T, tau, rng)
            koebe.append((tau, n, koebe_check(f, n, j, t, tau)))
    return DistortionBatch(records, doubc, koebe)
