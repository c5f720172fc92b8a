"""The symmetric unimodal family x -> lam * (1 - |2x - 1|**ell) on [0, 1]."""
from __future__ import annotations

from dataclasses import dataclass

import gmpy2
from gmpy2 import mpfr

from .real import DEFAULT_BITS, PrecisionExhausted, Real, bits_of, to_real, tolerance, working


class DomainError(ValueError):
    pass


class NoRootError(ValueError):
    pass


class NonMonotoneError(ValueError):
    pass


class SingularPointError(ValueError):
    pass


@dataclass(frozen=True)
class IntervalR:
    lo: Real
    hi: Real
    closed: bool = True

    def __post_init__(self):
        if not self.lo < self.hi:
            raise ValueError(f"empty interval ({self.lo}, {self.hi})")
        if self.lo < 0 or self.hi > 1:
            raise ValueError("interval endpoints must lie in [0, 1]")

    @property
    def length(self) -> Real:
        with working(bits_of(self.lo, self.hi)):
            return self.hi - self.lo

    def __contains__(self, x) -> bool:
        if self.closed:
            return self.lo <= x <= self.hi
        return self.lo < x < self.hi


def _exponent(ell):
    # integer critical orders take the exact pow path
    if gmpy2.is_integer(ell):
        return int(ell)
    return ell


@dataclass(frozen=True)
class FibMap:
    lam: Real
    ell: Real
    bits: int = DEFAULT_BITS

    @classmethod
    def make(cls, lam, ell, bits: int = DEFAULT_BITS) -> "FibMap":
        lam, ell = to_real(lam, bits), to_real(ell, bits)
        if not 0 < lam <= 1:
            raise ValueError(f"lambda must lie in (0, 1], got {lam}")
        if ell < 1:
            raise ValueError(f"critical order must be at least 1, got {ell}")
        return cls(lam, ell, bits)

    def with_bits(self, bits: int) -> "FibMap":
        return FibMap(self.lam, self.ell, bits)

    @property
    def c(self) -> Real:
        return mpfr("0.5", self.bits)

    @property
    def critical_value(self) -> Real:
        return self.lam

    def working(self):
        return working(self.bits)

    # point evaluations -------------------------------------------------

    def _f(self, x, e):
        return self.lam * (1 - abs(2 * x - 1) ** e)

    def eval(self, x) -> Real:
        if not 0 <= x <= 1:
            raise DomainError(f"{x} outside [0, 1]")
        with self.working():
            return self._f(x, _exponent(self.ell))

    __call__ = eval

    def deriv(self, x) -> Real:
        if not 0 <= x <= 1:
            raise DomainError(f"{x} outside [0, 1]")
        with self.working():
            u = 2 * x - 1
            if u == 0:
                return mpfr(0)
            mag = 2 * self.lam * self.ell * abs(u) ** (_exponent(self.ell) - 1)
            return -mag if u > 0 else mag

    def schwarzian(self, x) -> Real:
        if not 0 <= x <= 1:
            raise DomainError(f"{x} outside [0, 1]")
        with self.working():
            u = 2 * x - 1
            if u == 0:
                raise SingularPointError("Schwarzian is singular at the critical point")
            return -2 * (self.ell ** 2 - 1) / (u * u)

    def hat(self, x) -> Real:
        """Reflection 1 - x, computed without rounding."""
        if not 0 <= x <= 1:
            raise DomainError(f"{x} outside [0, 1]")
        if x == 0:
            return mpfr(1, self.bits)
        need = max(x.precision, self.bits) + max(0, -gmpy2.get_exp(x)) + 2
        with working(need):
            return 1 - x

    # orbits ---------------------------------------------------------------

    def iterate(self, x, n: int, record: bool = False):
        if n < 0:
            raise ValueError("n must be non-negative")
        if not 0 <= x <= 1:
            raise DomainError(f"{x} outside [0, 1]")
        e = _exponent(self.ell)
        out = [x] if record else None
        with self.working():
            for _ in range(n):
                x = self._f(x, e)
                if record:
                    out.append(x)
        return out if record else x

    def orbit(self, x, n: int) -> list:
        return self.iterate(x, n, record=True)

    def side(self, x) -> int:
        """+1 right of c, -1 left of c; refuses points at rounding distance."""
        gap = x - mpfr("0.5")
        if abs(gap) <= tolerance(self.bits) / 2:
            raise PrecisionExhausted(f"orbit point {x} is within rounding of c", self.bits)
        return 1 if gap > 0 else -1

    def deriv_iterate(self, x, n: int) -> Real:
        """D f^n(x) by the chain rule along the orbit of x."""
        e = _exponent(self.ell)
        with self.working():
            prod = mpfr(1)
            for _ in range(n):
                u = 2 * x - 1
                if u == 0:
                    return mpfr(0)
                mag = 2 * self.lam * self.ell * abs(u) ** (e - 1)
                prod *= -mag if u > 0 else mag
                x = self._f(x, e)
        return prod

    # inverses -------------------------------------------------------------

    def inverse(self, y, side: int) -> Real:
        """Preimage of y on the given side of c (side = +1 or -1)."""
        if not 0 <= y <= self.lam:
            raise NoRootError(f"{y} outside the image [0, {self.lam}]")
        with self.working():
            w = 1 - y / self.lam
            e = _exponent(self.ell)
            if isinstance(e, int):
                w = gmpy2.root(w, e)
            else:
                w = w ** (1 / e)
            return mpfr("0.5") + side * w / 2

    def pullback(self, y, sides) -> Real:
        """Pull y back along inverse branches; sides[0] is applied last."""
        for s in reversed(sides):
            y = self.inverse(y, s)
        return y

    def pullback_branch(self, target, branch: IntervalR) -> Real:
        c = self.c
        if branch.lo < c < branch.hi:
            raise NonMonotoneError("branch straddles the critical point")
        side = 1 if branch.lo >= c else -1
        a, b = self.eval(branch.lo), self.eval(branch.hi)
        lo_img, hi_img = min(a, b), max(a, b)
        if branch.closed:
            inside = lo_img <= target <= hi_img
        else:
            inside = lo_img < target < hi_img
        if not inside:
            raise NoRootError(f"{target} not in the image of the branch")
        y = self.inverse(target, side)
        # closed form can land a rounding step outside; bisect if so
        if y in branch and abs(self.eval(y) - target) <= self._root_tol(target):
            return y
        return self._bisect_branch(target, branch, side)

    def _root_tol(self, target):
        return mpfr(2, self.bits) ** (16 - self.bits) * max(abs(target), mpfr(1))

    def _bisect_branch(self, target, branch, side):
        lo, hi = branch.lo, branch.hi
        # f increases on the left branch, decreases on the right
        with self.working():
            for _ in range(self.bits + 8):
                mid = (lo + hi) / 2
                above = self._f(mid, _exponent(self.ell)) > target
                if above == (side < 0):
                    hi = mid
                else:
                    lo = mid
        return (lo + hi) / 2

    def fixed_point(self) -> Real:
        """The orientation-reversing fixed point in (c, 1]."""
        lo, hi = self.c, mpfr(1, self.bits)
        e = _exponent(self.ell)
        with self.working():
            for _ in range(self.bits + 8):
                mid = (lo + hi) / 2
                if self._f(mid, e) > mid:
                    lo = mid
                else:
                    hi = mid
        return lo
