"""Extended-precision scalars backed by gmpy2.mpfr.

Every dynamical quantity is an ``mpfr``.  Arithmetic happens inside a
``working(bits)`` block so that results carry an explicit precision; the
helpers here convert, compare and serialize without ever falling back to
binary floats.
"""
from __future__ import annotations

import math
import os
from functools import wraps

import gmpy2
from gmpy2 import mpfr

DEFAULT_BITS = 256
MIN_BITS = 64
DEFAULT_CAP = 16384
CAP_ENV = "FIBWALK_PRECISION_CAP"

Real = type(mpfr(0))


class PrecisionExhausted(ArithmeticError):
    """Raised when a comparison cannot be decided at the current precision."""

    def __init__(self, msg: str, bits: int | None = None):
        super().__init__(msg)
        self.bits = bits


def precision_cap() -> int:
    raw = os.environ.get(CAP_ENV)
    if raw is None:
        return DEFAULT_CAP
    cap = int(raw)
    if cap < MIN_BITS:
        raise ValueError(f"{CAP_ENV}={cap} is below {MIN_BITS} bits")
    return cap


def working(bits: int):
    """Context manager that sets the thread-local mpfr precision."""
    if bits < MIN_BITS:
        raise ValueError(f"precision must be at least {MIN_BITS} bits, got {bits}")
    return gmpy2.context(gmpy2.get_context(), precision=bits)


def at_map_precision(fn):
    """Run ``fn(f, ...)`` inside ``working(f.bits)``."""

    @wraps(fn)
    def inner(f, *args, **kwargs):
        with working(f.bits):
            return fn(f, *args, **kwargs)

    return inner


def bits_of(*xs) -> int:
    return max(max(getattr(x, "precision", MIN_BITS) for x in xs), MIN_BITS)


def to_real(x, bits: int = DEFAULT_BITS) -> Real:
    """Convert ints, Fractions, decimal strings or mpfr to an mpfr of ``bits``.

    Floats are accepted but converted exactly from their binary value, so
    ``to_real(0.1)`` is not one tenth; pass ``"0.1"`` for that.
    """
    if isinstance(x, str):
        return mpfr(x, bits)
    if hasattr(x, "numerator") and hasattr(x, "denominator") and not isinstance(x, int):
        with working(bits):
            return mpfr(x.numerator) / mpfr(x.denominator)
    return mpfr(x, bits)


def tolerance(bits: int) -> Real:
    """Relative separation below which comparisons are refused."""
    return mpfr(2, bits) ** (8 - bits)


def decide(a, b, bits: int) -> int:
    """Sign of a - b, refusing to answer when the gap is at rounding level."""
    with working(bits):
        gap = a - b
        scale = max(abs(a), abs(b))
        if scale == 0 or abs(gap) <= tolerance(bits) * scale:
            raise PrecisionExhausted(f"cannot order {a} and {b} at {bits} bits", bits)
    return 1 if gap > 0 else -1


def same(a, b, rel) -> bool:
    """Point-identity check at a relative tolerance."""
    scale = max(abs(a), abs(b))
    if scale == 0:
        return True
    return abs(a - b) <= rel * scale


def digits_for(bits: int) -> int:
    return math.ceil(bits * math.log10(2)) + 2


def to_decimal(x, bits: int | None = None) -> str:
    """Round-trippable decimal string, e.g. '9.78...e-1'."""
    if isinstance(x, int):
        return str(x)
    x = mpfr(x) if not isinstance(x, Real) else x
    if bits is None:
        bits = x.precision
    if gmpy2.is_infinite(x):
        return "inf" if x > 0 else "-inf"
    if gmpy2.is_nan(x):
        return "nan"
    mant, exp, _ = x.digits(10, digits_for(bits))
    if mant.startswith("-"):
        sign, mant = "-", mant[1:]
    else:
        sign = ""
    mant = mant.rstrip("0") or "0"
    if mant == "0":
        return "0"
    head, tail = mant[0], mant[1:]
    body = f"{head}.{tail}" if tail else head
    return f"{sign}{body}e{exp - 1}"


def short_decimal(x) -> str:
    """Shortest decimal string that round-trips a double."""
    return repr(float(x))


def from_decimal(s: str, bits: int = DEFAULT_BITS) -> Real:
    return mpfr(s, bits)
