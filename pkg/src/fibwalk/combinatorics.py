"""Cutting times, closest returns and the parameter solver.

The solver bisects on the kneading sequence of the critical value.  The
target itinerary is built from the Fibonacci kneading map Q(k) = k - 2,
and candidate parameters are ordered by the usual twisted lexicographic
rule: after a prefix with an odd number of right-hand symbols the order
flips.  Ties (itinerary agrees on the whole target) move the lower end up,
so the bracket shrinks onto the top of the Fibonacci parameter cylinder.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

from gmpy2 import mpfr

from .fibmap import FibMap
from .real import DEFAULT_BITS, PrecisionExhausted, Real, precision_cap, to_decimal, tolerance

log = logging.getLogger(__name__)

# extra Fibonacci levels in the target beyond the requested depth; four keeps
# c_{S_K + S_{K+2}} inside the verified part of the itinerary
TARGET_MARGIN = 4


class NotFoundError(RuntimeError):
    pass


class InsufficientDepthError(ValueError):
    pass


class PrecisionCapError(PrecisionExhausted):
    pass


def fibonacci_times(K: int) -> list[int]:
    if K < 0:
        raise ValueError("K must be non-negative")
    S = [1, 2]
    while len(S) < K + 1:
        S.append(S[-1] + S[-2])
    return S[: K + 1]


def kneading_map(k: int) -> int:
    return max(k - 2, 0)


def kneading_target(length: int) -> list[int]:
    """Sides (1 = right of c) of c_1, c_2, ... for Fibonacci combinatorics."""
    e = [None, 1]
    S = [1, 2]
    k = 1
    while len(e) - 1 < length:
        sq = S[kneading_map(k)]
        e.extend(e[1:sq] + [1 - e[sq]])
        S.append(S[-1] + S[-2])
        k += 1
    return e[1 : length + 1]


@dataclass(frozen=True)
class ClosestReturnRecord:
    time: int
    point: Real
    distance: Real
    side: int


@dataclass(frozen=True)
class SideVerdict:
    ok: bool
    first_violation: int | None = None


@dataclass(frozen=True)
class CombinatoricsVerdict:
    ok: bool
    depth_reached: int
    first_violation: tuple[int, int | None] | None = None
    sides_ok: bool = True

    def to_json(self) -> dict:
        return {
            "ok": self.ok,
            "depth_reached": self.depth_reached,
            "first_violation": list(self.first_violation) if self.first_violation else None,
            "sides_ok": self.sides_ok,
        }


def closest_returns(f: FibMap, N: int) -> list[ClosestReturnRecord]:
    if N < 1:
        raise ValueError("N must be at least 1")
    c = f.c
    out = []
    best = None
    for n, x in enumerate(f.orbit(c, N)[1:], start=1):
        with f.working():
            dist = abs(x - c)
        if best is None or dist < best:
            best = dist
            out.append(ClosestReturnRecord(n, x, dist, f.side(x)))
    return out


def side_pattern(records) -> SideVerdict:
    """Check that d_{n+2} and d_n sit on opposite sides of c."""
    sides = [r.side if isinstance(r, ClosestReturnRecord) else int(r) for r in records]
    if len(sides) < 4:
        raise InsufficientDepthError(f"need at least 4 levels, got {len(sides)}")
    for n in range(len(sides) - 2):
        if sides[n + 2] != -sides[n]:
            return SideVerdict(False, n)
    return SideVerdict(True)


def is_fibonacci_to_depth(f: FibMap, K: int) -> CombinatoricsVerdict:
    if K < 2:
        raise ValueError("K must be at least 2")
    S = fibonacci_times(K)
    recs = closest_returns(f, S[K])
    depth = -1
    for k, s in enumerate(S):
        observed = recs[k].time if k < len(recs) else None
        if observed != s:
            return CombinatoricsVerdict(False, depth, (s, observed))
        depth = k
    sides_ok = side_pattern(recs).ok if K >= 3 else True
    return CombinatoricsVerdict(sides_ok, K, None, sides_ok)


def kneading_compare(lam, ell, target: list[int], bits: int) -> int:
    """+1 if the itinerary of lam exceeds the target, -1 if below, 0 on a tie."""
    f = FibMap(lam, ell, bits)
    e = int(ell) if ell == int(ell) else ell
    eps = tolerance(bits) / 2
    with f.working():
        half = mpfr("0.5")
        x = lam
        odd = False
        for t in target:
            gap = x - half
            if abs(gap) <= eps:
                raise PrecisionExhausted("critical orbit too close to c", bits)
            s = 1 if gap > 0 else 0
            if s != t:
                bigger = s > t
                return 1 if bigger != odd else -1
            odd ^= s == 1
            x = lam * (1 - abs(2 * x - 1) ** e)
    return 0


@dataclass(frozen=True)
class SolveResult:
    ell: Real
    K: int
    lambda_star: Real
    precision_bits: int
    bracket_width: Real
    verdict: CombinatoricsVerdict
    steps: int = 0
    attempts: list[int] = field(default_factory=list)

    def fibmap(self) -> FibMap:
        return FibMap(self.lambda_star, self.ell, self.precision_bits)

    def to_json(self) -> dict:
        return {
            "ell": to_decimal(self.ell),
            "K": self.K,
            "lambda_star": to_decimal(self.lambda_star),
            "precision_bits": self.precision_bits,
            "bracket_width": to_decimal(self.bracket_width, 64),
            "verdict": self.verdict.to_json(),
        }


def _bisect(ell, K: int, bits: int, margin: int):
    S = fibonacci_times(K + margin)
    target = kneading_target(S[-1])
    lo, hi = mpfr("0.75", bits), mpfr(1, bits)
    if kneading_compare(lo, ell, target, bits) > 0:
        raise NotFoundError("lower bracket end already exceeds the Fibonacci itinerary")
    if kneading_compare(hi, ell, target, bits) <= 0:
        raise NotFoundError("upper bracket end does not exceed the Fibonacci itinerary")
    width = mpfr(2, bits) ** (-(bits // 2))
    steps = 0
    while hi - lo > width:
        with FibMap(lo, ell, bits).working():
            mid = (lo + hi) / 2
        if kneading_compare(mid, ell, target, bits) > 0:
            hi = mid
        else:
            lo = mid
        steps += 1
    return lo, hi, steps


def solve_parameter(ell, K: int, bits: int = DEFAULT_BITS, cap: int | None = None,
                    margin: int = TARGET_MARGIN) -> SolveResult:
    if K < 2:
        raise ValueError("K must be at least 2")
    cap = precision_cap() if cap is None else cap
    ell = mpfr(ell, bits)
    if ell < 2:
        raise ValueError("critical order must be at least 2")
    attempts = []
    while True:
        attempts.append(bits)
        try:
            lo, hi, steps = _bisect(ell, K, bits, margin)
            verdict = is_fibonacci_to_depth(FibMap(lo, ell, bits), K)
            if not verdict.ok:
                # bracket stopped above the cylinder width
                raise PrecisionExhausted(f"bracket at {bits} bits misses depth {K}", bits)
            break
        except PrecisionExhausted:
            if bits * 2 > cap:
                raise PrecisionCapError(f"precision cap {cap} bits reached", bits)
            log.info("escalating precision %d -> %d bits", bits, 2 * bits)
            bits *= 2
            ell = mpfr(ell, bits)
    return SolveResult(ell, K, lo, bits, hi - lo, verdict, steps, attempts)
