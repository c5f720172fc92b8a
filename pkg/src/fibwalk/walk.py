"""Scaling conditions on (a_i, nu_i), moment bounds and the level random walk.

Infinite sequences are a finite prefix followed by a declared geometric tail,
so every infinite sum has a closed form.  The simulator runs walkers in fixed
chunks with their own Philox streams; results do not depend on how chunks
are spread over threads.
"""
from __future__ import annotations

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
import gmpy2
import numpy as np
from gmpy2 import mpfr

from .real import short_decimal as _dec, working

BITS = 128
CHUNK = 4096
BIN_WIDTH = 16
BINS = 64
# relative slack for comparisons that hold with equality in exact arithmetic
SLACK = mpfr("0x1p-100", 128)


class TailUndeclaredError(ValueError):
    pass


class DivergentTailError(ValueError):
    pass


class InvalidLawError(ValueError):
    pass


class ScalingFailure(ValueError):
    pass


def _r(x) -> mpfr:
    if isinstance(x, Fraction):
        return mpfr(x.numerator, BITS) / x.denominator
    return mpfr(str(x) if isinstance(x, float) else x, BITS)


@dataclass(frozen=True)
class ScalingConstants:
    rho_minus: object
    rho_plus: object
    Omega1: object = 1
    Omega2: object = 1
    C: object = 2
    d: int = 0
    k0: int = 2
    a0: object | None = None

    def __post_init__(self):
        if not 1 < self.rho_minus <= self.rho_plus:
            raise ValueError("need 1 < rho_minus <= rho_plus")
        if self.Omega1 <= 0 or self.Omega2 <= 0:
            raise ValueError("Omega1 and Omega2 must be positive")
        if self.d < 0 or self.k0 < 1:
            raise ValueError("need d >= 0 and k0 >= 1")

    @property
    def K_plus(self):
        with working(BITS):
            rm, rp = _r(self.rho_minus), _r(self.rho_plus)
            return (rp - 1) * rm / ((rm - 1) * rp)

    @property
    def in_model_range(self) -> bool:
        """rho_plus < 2 and the spread ratio bounded by C, as the model assumes."""
        with working(BITS):
            rm, rp = _r(self.rho_minus), _r(self.rho_plus)
            return rp < 2 and (rp - 1) / (rm - 1) <= _r(self.C)


@dataclass(frozen=True)
class SequencePair:
    """a_0, a_1, ... and nu_1, nu_2, ... as prefixes with geometric tails.

    ``a_tail`` / ``nu_tail`` is the ratio q continuing a prefix ending in x as
    x q, x q^2, ...; ``None`` means undeclared, and 0 (for nu only) means the
    sequence stops.
    """

    a: tuple
    nu: tuple
    a_tail: object | None = None
    nu_tail: object | None = 0

    def __post_init__(self):
        object.__setattr__(self, "a", tuple(self.a))
        object.__setattr__(self, "nu", tuple(self.nu))
        if not self.a or any(x <= 0 for x in self.a):
            raise ValueError("a must be a nonempty positive sequence")
        if not self.nu or any(x < 0 for x in self.nu):
            raise ValueError("nu must be nonnegative")
        for q in (self.a_tail, self.nu_tail):
            if q is not None and not 0 <= q:
                raise ValueError("tail ratios must be nonnegative")
        if self.a_tail == 0:
            raise ValueError("a is positive, its tail cannot stop")

    # element access ---------------------------------------------------

    def a_at(self, i: int):
        P = len(self.a)
        if i < P:
            return _r(self.a[i])
        if self.a_tail is None:
            raise TailUndeclaredError(f"a_{i} lies beyond the prefix and no tail is declared")
        return _r(self.a[-1]) * _r(self.a_tail) ** (i - P + 1)

    def nu_at(self, i: int):
        """nu_i for i >= 1."""
        P = len(self.nu)
        if i < 1:
            raise IndexError("nu is indexed from 1")
        if i <= P:
            return _r(self.nu[i - 1])
        if self.nu_tail is None:
            raise TailUndeclaredError(f"nu_{i} lies beyond the prefix and no tail is declared")
        return _r(self.nu[-1]) * _r(self.nu_tail) ** (i - P)

    def a_tail_sum(self, j: int):
        """Sum of a_i over i >= j."""
        if self.a_tail is None:
            raise TailUndeclaredError("infinite sum of a needs a declared tail")
        q = _r(self.a_tail)
        if q >= 1:
            raise DivergentTailError("tail ratio of a must be below 1")
        with working(BITS):
            P = len(self.a)
            if j >= P:
                return self.a_at(j) / (1 - q)
            head = sum((_r(x) for x in self.a[j:]), mpfr(0))
            return head + _r(self.a[-1]) * q / (1 - q)

    def a_partial(self, k: int):
        """Sum of a_i over 0 <= i <= k."""
        with working(BITS):
            return sum((self.a_at(i) for i in range(k + 1)), mpfr(0))

    def nu_max(self, d: int):
        return max(self.nu_at(i) for i in range(1, d + 2))

    def nu_total(self):
        with working(BITS):
            total = sum((_r(x) for x in self.nu), mpfr(0))
            q = _r(self.nu_tail) if self.nu_tail is not None else None
            if q:
                if q >= 1:
                    raise DivergentTailError("tail ratio of nu must be below 1")
                total += _r(self.nu[-1]) * q / (1 - q)
            return total

    def horizon(self, extra: int = 32) -> int:
        """Indices checked explicitly; beyond this the tails are pure geometric."""
        return max(len(self.a), len(self.nu) + 1) + extra


@dataclass
class InequalityReport:
    name: str
    ok: bool
    first_violation: tuple | int | None
    checked: int
    worst_margin: object

    def to_json(self) -> dict:
        fv = self.first_violation
        return {
            "name": self.name,
            "ok": self.ok,
            "first_violation": list(fv) if isinstance(fv, tuple) else fv,
            "checked": self.checked,
            "worst_margin": _dec(self.worst_margin),
        }


def _powers(x, n):
    out = [mpfr(1)]
    for _ in range(n):
        out.append(out[-1] * x)
    return out


class _Tracker:
    def __init__(self, name):
        self.name, self.first, self.count, self.worst = name, None, 0, None

    def add(self, index, lhs, rhs):
        """Record lhs <= rhs at index."""
        self.count += 1
        margin = rhs / lhs if lhs > 0 else mpfr("inf")
        self.worst = margin if self.worst is None else min(self.worst, margin)
        if lhs > rhs * (1 + SLACK) and self.first is None:
            self.first = index

    def fail(self, index):
        if self.first is None:
            self.first = index

    def report(self):
        return InequalityReport(self.name, self.first is None, self.first, self.count,
                                self.worst if self.worst is not None else mpfr(1))


def validate_scaling(pair: SequencePair, consts: ScalingConstants, extra: int = 32) -> dict:
    """Check the three scaling inequalities; violations are listed k-major, j descending."""
    N = pair.horizon(extra)
    d = consts.d
    with working(BITS):
        rm, rp = _r(consts.rho_minus), _r(consts.rho_plus)
        O1, O2 = _r(consts.Omega1), _r(consts.Omega2)
        a0 = _r(consts.a0) if consts.a0 is not None else pair.a_at(0)
        tails = [pair.a_tail_sum(j) for j in range(N + 1)]
        pm, pp = _powers(rm, N), _powers(rp, N)
        first = _Tracker("tail_ratio")
        for k in range(N + 1):
            for j in range(k, -1, -1):
                ratio = tails[j] / tails[k]
                first.add((j, k), pm[k - j], ratio)
                first.add((j, k), ratio, pp[k - j])
        q = _r(pair.a_tail)
        if not rm * (1 - SLACK) <= 1 / q <= rp * (1 + SLACK):
            first.fail(("tail", "tail"))

        numax = pair.nu_max(d)
        partial = [pair.a_partial(k) for k in range(N + 2)]
        second = _Tracker("nu_lower")
        third = _Tracker("nu_upper")
        a1 = pair.a_at(1)
        for k in range(N + 1):
            share = pair.nu_at(k + 1) / pair.a_at(k + 1)
            if k >= d:
                second.add(k, O1 * (a0 / partial[k]) * (numax / partial[k + 1]), share)
            third.add(k, share, O2 * numax / a1)
        qn = _r(pair.nu_tail) if pair.nu_tail is not None else None
        if qn is None:
            raise TailUndeclaredError("nu needs a declared tail for the infinite checks")
        # past the horizon the share nu/a scales like (q_nu / q_a)^k
        if qn < q * (1 - SLACK):
            second.fail("tail")
        if qn > q * (1 + SLACK):
            third.fail("tail")
    return {"tail_ratio": first.report(), "nu_lower": second.report(), "nu_upper": third.report()}


def scaling_ok(reports: dict) -> bool:
    return all(r.ok for r in reports.values())


def derived_bounds(pair: SequencePair, consts: ScalingConstants, extra: int = 32,
                   require_valid: bool = True) -> dict:
    if require_valid:
        checks = validate_scaling(pair, consts, extra)
        for name, rep in checks.items():
            if not rep.ok:
                raise ScalingFailure(f"{name} fails first at {rep.first_violation}")
    N = pair.horizon(extra)
    with working(BITS):
        rm, rp = _r(consts.rho_minus), _r(consts.rho_plus)
        Kp = consts.K_plus
        O2 = _r(consts.Omega2)
        share, terms, decay = _Tracker("tail_share"), _Tracker("term_ratio"), _Tracker("nu_decay")
        for j in range(N + 1):
            part = pair.a_at(j) / pair.a_tail_sum(j)
            share.add(j, 1 - 1 / rm, part)
            share.add(j, part, 1 - 1 / rp)
        a = [pair.a_at(i) for i in range(N + 1)]
        pm, pp = _powers(rm, N), _powers(rp, N)
        for k in range(N + 1):
            for j in range(k, -1, -1):
                ratio = a[j] / a[k]
                terms.add((j, k), pm[k - j] / Kp, ratio)
                terms.add((j, k), ratio, Kp * pp[k - j])
        numax = pair.nu_max(consts.d)
        for k in range(1, N + 1):
            decay.add(k, pair.nu_at(k), O2 * numax * Kp * rm ** (-(k - 1)))
    return {"K_plus": Kp, "tail_share": share.report(), "term_ratio": terms.report(), "nu_decay": decay.report()}


def moments(pair: SequencePair):
    """(sum j nu_j, sum j^2 nu_j) with the geometric tail in closed form."""
    with working(BITS):
        m1 = sum((j * _r(x) for j, x in enumerate(pair.nu, start=1)), mpfr(0))
        m2 = sum((j * j * _r(x) for j, x in enumerate(pair.nu, start=1)), mpfr(0))
        if pair.nu_tail is None:
            raise TailUndeclaredError("moments need a declared tail for nu")
        q = _r(pair.nu_tail)
        if q:
            if q >= 1:
                raise DivergentTailError("tail ratio of nu must be below 1")
            P, base = len(pair.nu), _r(pair.nu[-1])
            s0 = q / (1 - q)
            s1 = q / (1 - q) ** 2
            s2 = q * (1 + q) / (1 - q) ** 3
            m1 += base * (P * s0 + s1)
            m2 += base * (P * P * s0 + 2 * P * s1 + s2)
        return m1, m2


def gerlem_check(q, d: int, n=None, q_inf=None, tail_ratio=None) -> bool:
    """Summation inequality for a positive increasing q (q[0] is q(1)).

    ``n=None`` means n = infinity; then q(inf) - q(j) is continued past the
    list as (q_inf - q(L)) * tail_ratio^(j - L).
    """
    vals = [mpfr(x, BITS) for x in q]
    if any(b <= a for a, b in zip(vals, vals[1:])) or vals[0] <= 0:
        raise ValueError("q must be positive and strictly increasing")
    with working(BITS):
        if n is not None:
            if n - 1 < d + 1 or n > len(vals):
                raise ValueError("need d + 2 <= n <= len(q)")

            def Q(j):
                return vals[j - 1]

            lhs = sum((j * (Q(j + 1) - Q(j)) / (Q(j) * Q(j + 1)) for j in range(d + 1, n)), mpfr(0))
            rhs = sum(((Q(n) - Q(j)) / (Q(n) * Q(j)) for j in range(d + 1, n)), mpfr(0))
            return lhs >= rhs * (1 - SLACK)
        if q_inf is None or tail_ratio is None:
            raise TailUndeclaredError("n = infinity needs q_inf and a tail ratio")
        qi, th = mpfr(q_inf, BITS), mpfr(tail_ratio, BITS)
        L = len(vals)
        gap = qi - vals[-1]

        def Q(j):
            return vals[j - 1] if j <= L else qi - gap * th ** (j - L)

        lhs = rhs = mpfr(0)
        j = d + 1
        while True:
            dl = j * (Q(j + 1) - Q(j)) / (Q(j) * Q(j + 1))
            dr = (qi - Q(j)) / (qi * Q(j))
            lhs, rhs = lhs + dl, rhs + dr
            if j > L and dl < lhs * SLACK and dr < rhs * SLACK:
                break
            j += 1
        return lhs >= rhs * (1 - SLACK)


@dataclass(frozen=True)
class IntegrResult:
    lhs_partial: object
    rhs: object
    k_star: int | None

    @property
    def passed(self) -> bool:
        return self.k_star is not None


def integr_bound(rho, d: int) -> IntegrResult:
    with working(BITS):
        rho = _r(rho)
        upper = mpfr(2) ** (mpfr(1) / d) if d > 0 else mpfr(2)
        if not 1 < rho < upper:
            raise ValueError(f"need 1 < rho < 2^(1/d), got rho={rho}, d={d}")
        rhs = gmpy2.log(1 / (2 * (d + 1) * (rho - 1))) / gmpy2.log(rho)
        total = mpfr(0)
        k = d + 1
        while True:
            term = 1 / (rho ** k - 1)
            total += term
            if total > rhs:
                return IntegrResult(total, rhs, k)
            if term < total * SLACK:
                return IntegrResult(total, rhs, None)
            k += 1


@dataclass(frozen=True)
class MomentBounds:
    bigmu_bound: object
    smallmu: dict
    m1: object
    passed: bool

    @property
    def best(self):
        return max([self.bigmu_bound] + list(self.smallmu.values()))


def smallmu_bound(r, numax, Omega2, K_plus):
    with working(BITS):
        r = _r(r)
        return r * (1 - _r(Omega2) * numax * K_plus * r)


def moment_lower_bounds(pair: SequencePair, consts: ScalingConstants, r_max: int = 64) -> MomentBounds:
    with working(BITS):
        d = consts.d
        rp = _r(consts.rho_plus)
        upper = mpfr(2) ** (mpfr(1) / d) if d > 0 else mpfr(2)
        if not rp < upper:
            raise ValueError("need rho_plus < 2^(1/d)")
        Kp = consts.K_plus
        numax = pair.nu_max(d)
        big = numax / 2 * _r(consts.Omega1) / Kp * gmpy2.log(1 / (2 * (d + 1) * (rp - 1)))
        small = {r: smallmu_bound(r, numax, consts.Omega2, Kp) for r in range(1, r_max + 1)}
        m1, _ = moments(pair)
        best = max([big] + list(small.values()))
        return MomentBounds(big, small, m1, m1 >= best * (1 - SLACK))


def choose_rho(E, Omega1, Omega2, C, d: int):
    with working(BITS):
        return 1 + gmpy2.exp(-64 * (_r(Omega2) / _r(Omega1)) * _r(E) ** 2 * _r(C)) / (2 * (d + 1))


# --- random generation of scaling-valid pairs ---------------------------------


def random_scaling_pair(rng: np.random.Generator, length: int = 12):
    """A pair that satisfies the scaling condition together with fitted constants.

    Successive tail ratios are drawn in [rho_minus, rho_plus]; a_i follows
    from the tail sums, nu_i = a_i * w_i with positive weights w, normalized.
    """
    rm = 1 + float(rng.uniform(0.05, 0.5))
    rp = min(rm + float(rng.uniform(0.0, 0.4)), 1.95)
    ratios = rng.uniform(rm, rp, size=length)
    q = 1 / float(rng.uniform(rm, rp))
    # tail sums T_j with T_j / T_{j+1} = ratios[j]; past T_length the tail is geometric
    T = [1.0]
    for r in ratios:
        T.append(T[-1] / float(r))
    a = [T[j] - T[j + 1] for j in range(length)] + [T[length] * (1 - q)]
    weights = rng.uniform(0.5, 2.0, size=length)
    nu_raw = [a[i + 1] * float(w) for i, w in enumerate(weights)]
    total = sum(nu_raw) + nu_raw[-1] * q / (1 - q)
    nu = [x / total for x in nu_raw]
    d = int(rng.integers(0, 3))
    pair = SequencePair(tuple(a), tuple(nu), a_tail=q, nu_tail=q)
    return pair, fit_constants(pair, d)


def fit_constants(pair: SequencePair, d: int = 0, k0: int = 2) -> ScalingConstants:
    """Tightest constants for which the pair satisfies the scaling inequalities.

    The fit runs over the explicit horizon, widened by 2^-80 so that exact
    equalities survive rounding.  Omega1 is fitted over indices where nu is
    positive and falls back to 1 when there are none.
    """
    widen = mpfr(2) ** -80
    with working(BITS):
        N = pair.horizon()
        tails = [pair.a_tail_sum(j) for j in range(N + 2)]
        steps = [tails[j] / tails[j + 1] for j in range(N + 1)]
        lo, hi = min(steps) * (1 - widen), max(steps) * (1 + widen)
        if lo <= 1:
            raise ScalingFailure("tail sums do not decrease geometrically")
        numax = pair.nu_max(d)
        if numax <= 0:
            raise ScalingFailure("nu_max vanishes")
        a0 = pair.a_at(0)
        share = [pair.nu_at(k + 1) / pair.a_at(k + 1) for k in range(N + 1)]
        partial = [pair.a_partial(k) for k in range(N + 2)]
        fits = [share[k] / ((a0 / partial[k]) * (numax / partial[k + 1]))
                for k in range(d, N + 1) if share[k] > 0]
        O1 = min(fits) * (1 - widen) if fits else mpfr(1)
        O2 = max(s / (numax / pair.a_at(1)) for s in share) * (1 + widen)
        return ScalingConstants(lo, hi, O1, O2, (hi - 1) / (lo - 1) + 1, d, k0)


# --- simulator -----------------------------------------------------------------


@dataclass(frozen=True)
class IncrementLaw:
    """Law of j >= 1 as exact probabilities: a prefix nu_1..nu_P and a tail ratio."""

    probs: tuple
    tail: Fraction = Fraction(0)

    @classmethod
    def make(cls, probs, tail=0) -> "IncrementLaw":
        fr = tuple(Fraction(str(p)) if isinstance(p, float) else Fraction(p) for p in probs)
        t = Fraction(str(tail)) if isinstance(tail, float) else Fraction(tail)
        law = cls(fr, t)
        if law.total != 1:
            raise InvalidLawError(f"probabilities sum to {float(law.total)}, not 1")
        return law

    @classmethod
    def point_mass(cls, j: int) -> "IncrementLaw":
        return cls.make([0] * (j - 1) + [1])

    @property
    def tail_mass(self) -> Fraction:
        if self.tail == 0:
            return Fraction(0)
        if not 0 < self.tail < 1:
            raise DivergentTailError("tail ratio must lie in (0, 1)")
        return self.probs[-1] * self.tail / (1 - self.tail)

    @property
    def total(self) -> Fraction:
        return sum(self.probs, Fraction(0)) + self.tail_mass

    def moments(self) -> tuple[Fraction, Fraction]:
        m1 = sum((j * p for j, p in enumerate(self.probs, start=1)), Fraction(0))
        m2 = sum((j * j * p for j, p in enumerate(self.probs, start=1)), Fraction(0))
        q = self.tail
        if q:
            P, base = len(self.probs), self.probs[-1]
            s0, s1, s2 = q / (1 - q), q / (1 - q) ** 2, q * (1 + q) / (1 - q) ** 3
            m1 += base * (P * s0 + s1)
            m2 += base * (P * P * s0 + 2 * P * s1 + s2)
        return m1, m2

    def shift_moments(self, k0: int) -> tuple[Fraction, Fraction]:
        """Mean and second moment of j - k0 - 1."""
        m1, m2 = self.moments()
        s = k0 + 1
        return m1 - s, m2 - 2 * s * m1 + s * s

    def pair(self) -> SequencePair:
        return SequencePair((1,), tuple(float(p) for p in self.probs), a_tail=Fraction(1, 2),
                            nu_tail=self.tail)

    def sample(self, u: np.ndarray) -> np.ndarray:
        """Inverse-CDF draw of j from uniforms u; the tail is inverted in closed form."""
        cdf = np.cumsum([float(p) for p in self.probs])
        P = len(self.probs)
        j = np.minimum(np.searchsorted(cdf, u, side="right") + 1, P + 1)
        if not self.tail:
            # rounding of the float cdf can leave u above the last entry
            return np.minimum(j, P)
        # inside the tail, (u - head) / tail_mass is uniform and P + k has weight q^k
        head = cdf[-1]
        # keep v < 1 so log1p stays finite when u rounds up to 1
        v = np.clip((u - head) / (1 - head), 0.0, np.nextafter(1.0, 0.0))
        k = 1 + np.floor(np.log1p(-v) / math.log(float(self.tail))).astype(np.int64)
        return np.where(j > P, P + np.maximum(k, 1), j)


def chow_sum(N: int) -> float:
    """Sum of 1/j^2 over j > N."""
    return math.pi ** 2 / 6 - math.fsum(1.0 / (j * j) for j in range(1, N + 1))


def chow_threshold(law: IncrementLaw, k0: int) -> int:
    """Smallest s - r0 with M * sum_{j > s - r0} j^-2 < 1/2, M = max(m2, E[dphi^2])."""
    _, m2 = law.moments()
    _, e2 = law.shift_moments(k0)
    M = float(max(m2, e2))
    N = 1
    while M * chow_sum(N) >= 0.5:
        N += 1
    return N


@dataclass
class WalkTrace:
    phi: list
    Z: list
    W: list
    M: list
    tau: int | None
    escaped: bool

    def doob_exact(self) -> bool:
        return all(z == w + m for z, w, m in zip(self.Z, self.W, self.M))


@dataclass
class WalkEnsemble:
    n_walkers: int
    horizon: int
    s: int
    r0: int
    k0: int
    drift: Fraction
    phi_final: np.ndarray
    tau: np.ndarray  # -1 when the walker never reaches r0
    late_slope: np.ndarray
    hr_statistic: np.ndarray
    doob_ok: bool
    bins: np.ndarray  # rows: count, sum of dM, sum of dM^2 per phi bin
    traces: list = field(default_factory=list)

    @property
    def increment_sq_mean(self) -> float:
        n = self.bins[0].sum()
        return float(self.bins[2].sum() / n) if n else 0.0

    def martingale_zscores(self, min_count: int = 100) -> np.ndarray:
        """Mean of M_{n+1} - M_n per phi bin in units of its standard error."""
        n, s1, s2 = self.bins
        keep = n >= min_count
        mean = s1[keep] / n[keep]
        var = s2[keep] / n[keep] - mean ** 2
        se = np.sqrt(np.maximum(var, 1e-300) / n[keep])
        return mean / se

    @property
    def escaped(self) -> np.ndarray:
        return self.tau < 0

    @property
    def escape_fraction(self) -> float:
        return float(np.mean(self.escaped))

    def slope_at_horizon(self) -> np.ndarray:
        """phi_H / H over escapers."""
        return self.phi_final[self.escaped] / self.horizon if self.horizon else np.array([])

    def increment_slope(self) -> np.ndarray:
        """(phi_H - s) / H over escapers; exactly the drift for deterministic laws."""
        if not self.horizon:
            return np.array([])
        return (self.phi_final[self.escaped] - self.s) / self.horizon

    def summary(self) -> dict:
        esc = self.escaped
        slopes = self.slope_at_horizon()
        qs = [0.0, 0.05, 0.5, 0.95, 1.0]

        def quant(x):
            if len(x) == 0:
                return [None] * len(qs)
            return [_dec(v) for v in np.quantile(x, qs)]

        p = self.escape_fraction
        return {
            "n_walkers": self.n_walkers,
            "horizon": self.horizon,
            "escape_fraction": _dec(p),
            "escape_sigma": _dec(math.sqrt(p * (1 - p) / self.n_walkers)),
            "slope_quantiles": quant(slopes),
            "late_slope_quantiles": quant(self.late_slope[esc]),
            "hr_statistic_max": _dec(np.max(self.hr_statistic)),
            "hr_exceed_fraction": _dec(np.mean(self.hr_statistic >= 1)),
            "increment_sq_mean": _dec(self.increment_sq_mean),
            "doob_exact": self.doob_ok,
        }


def _chunk_seeds(seed: int, n_walkers: int):
    n_chunks = (n_walkers + CHUNK - 1) // CHUNK
    return np.random.SeedSequence(seed).spawn(n_chunks)


class _Laws:
    """Uniform access to a fixed law or a state -> law map, with exact drifts."""

    def __init__(self, nu, k0):
        self.nu, self.k0 = nu, k0
        self.fixed = isinstance(nu, IncrementLaw)
        self._cache = {}

    def law(self, state: int) -> IncrementLaw:
        if self.fixed:
            return self.nu
        if state not in self._cache:
            law = self.nu(state)
            if law.total != 1:
                raise InvalidLawError(f"law at state {state} is not normalized")
            self._cache[state] = law
        return self._cache[state]

    def drift(self, state: int) -> Fraction:
        return self.law(state).shift_moments(self.k0)[0]

    def groups(self, phi, alive):
        if self.fixed:
            yield self.nu, alive
            return
        for state in np.unique(phi[alive]):
            yield self.law(int(state)), alive & (phi == state)


def _run_chunk(laws: _Laws, r0, s, horizon, size, seq, keep):
    rng = np.random.Generator(np.random.Philox(seq))
    k0 = laws.k0
    phi = np.full(size, s, dtype=np.int64)
    tau = np.full(size, -1, dtype=np.int64)
    compensator = np.zeros(size)  # W - s in floating point, for the statistics
    late = np.full(size, np.inf)
    hr = np.zeros(size)
    bins = np.zeros((3, BINS))  # count, sum dM, sum dM^2 per bin of phi
    hist = [phi[:keep].copy()] if keep else []
    # exact Doob bookkeeping for a fixed law: W and M scaled by the drift denominator
    doob = laws.fixed
    if doob:
        drift = laws.drift(s)
        den, num = drift.denominator, drift.numerator
        W = np.full(size, s * den, dtype=np.int64)
        M = np.zeros(size, dtype=np.int64)
    for t in range(1, horizon + 1):
        u = rng.random(size)
        alive = tau < 0
        inc = np.zeros(size, dtype=np.int64)
        mu = np.zeros(size)
        for law, mask in laws.groups(phi, alive):
            inc = np.where(mask, law.sample(u) - k0 - 1, inc)
            mu = np.where(mask, float(law.shift_moments(k0)[0]), mu)
        dM = inc - mu
        b = np.clip((phi - r0) // BIN_WIDTH, 0, BINS - 1)
        bins[0] += np.bincount(b[alive], minlength=BINS)
        bins[1] += np.bincount(b[alive], weights=dM[alive], minlength=BINS)
        bins[2] += np.bincount(b[alive], weights=dM[alive] ** 2, minlength=BINS)
        phi += inc
        compensator += mu
        if doob:
            W += np.where(alive, num, 0)
            M += np.where(alive, inc * den - num, 0)
            doob = bool(np.array_equal(phi * den, W + M))
        tau = np.where(alive & (phi <= r0), t, tau)
        if keep:
            hist.append(phi[:keep].copy())
        if 2 * t >= horizon:
            late = np.minimum(late, phi / t)
        hr = np.maximum(hr, np.abs((phi - s) - compensator) / (s - r0 + t))
    return phi, tau, late, hr, bins, hist, doob


def simulate_walk(nu, k0: int, r0: int, s: int, horizon: int, n_walkers: int,
                  seed: int, record: int = 0, threads: int = 1) -> WalkEnsemble:
    """Independent level walks phi_{t+1} = phi_t + j - k0 - 1 stopped at phi <= r0.

    ``nu`` is an IncrementLaw or a callable state -> IncrementLaw.  The Doob
    split uses exact rational drifts.  Z = W + M is checked at every step in
    Fractions on the first ``record`` walkers; for a state-independent law it
    is also checked at every step for all walkers, with W and M accumulated
    separately as integers scaled by the drift denominator.
    """
    if s <= r0 or r0 < 0:
        raise ValueError("need s > r0 >= 0")
    laws = _Laws(nu, k0)
    if laws.fixed:
        if nu.total != 1:
            raise InvalidLawError("law is not normalized")
        if nu.moments()[0] < k0 + 2:
            warnings.warn("mean of nu is below k0 + 2; the walk has drift below 1", stacklevel=2)
    seqs = _chunk_seeds(seed, n_walkers)
    sizes = [min(CHUNK, n_walkers - i * CHUNK) for i in range(len(seqs))]
    keeps = [max(0, min(size, record - i * CHUNK)) for i, size in enumerate(sizes)]

    def job(i):
        return _run_chunk(laws, r0, s, horizon, sizes[i], seqs[i], keeps[i])

    # state-dependent laws share a cache, so keep those single-threaded
    workers = max(1, threads) if laws.fixed else 1
    with ThreadPoolExecutor(max_workers=workers) as pool:
        parts = list(pool.map(job, range(len(seqs))))
    phi, tau, late, hr = (np.concatenate([p[i] for p in parts]) for i in range(4))
    bins = sum(p[4] for p in parts)
    traces = []
    for p in parts:
        if p[5]:
            arr = np.stack(p[5], axis=1)
            traces.extend(_trace(row, s, r0, laws) for row in arr)
    doob = all(tr.doob_exact() for tr in traces)
    if laws.fixed:
        doob = doob and all(p[6] for p in parts)
    drift = laws.drift(s) if laws.fixed else None
    return WalkEnsemble(n_walkers, horizon, s, r0, k0, drift, phi, tau, late, hr,
                        doob, bins, traces)


def _trace(path, s, r0, laws: _Laws) -> WalkTrace:
    phi = [int(x) for x in path]
    Z, W, M = [Fraction(phi[0])], [Fraction(s)], [Fraction(0)]
    tau = None
    for n in range(1, len(phi)):
        mu = laws.drift(phi[n - 1]) if tau is None else Fraction(0)
        z = Fraction(phi[n])
        W.append(W[-1] + mu)
        M.append(M[-1] + (z - Z[-1]) - mu)
        Z.append(z)
        if tau is None and phi[n] <= r0:
            tau = n
    return WalkTrace(phi, Z, W, M, tau, tau is None)
