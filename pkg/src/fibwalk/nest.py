"""Closest-return geometry of a solved map and the scaling inequalities.

Notation follows the usual one: d_n = c_{S_n}; z_n is the closest point to
c with f^{S_n}(z_n) = c on the side of d_{n+1}; u_n are the boundary
points of the nest; y_n = c_{S_n + S_{n+2}}; t_f[n] is the far endpoint
of the monotone branch of f^{S_n - 1} around the critical value.
Distances carrying the suffix ``_f`` are measured from f(c) after one
application of f, i.e. |f(x) - f(c)| = lam * |2x - 1|**ell.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import gmpy2
from gmpy2 import mpfr

from .combinatorics import fibonacci_times, is_fibonacci_to_depth
from .distortion import monotone_branch
from .fibmap import FibMap
from .real import Real, at_map_precision, bits_of, same, to_decimal, working

LAMBDA_MIN = mpfr("3.85", 256)
LOG_GAP_MIN = mpfr("2.7", 256)
COMPOSITE = 51200


class BranchIdentificationError(RuntimeError):
    pass


class DepthError(ValueError):
    pass


class UnboundedError(ValueError):
    pass


@dataclass(frozen=True)
class NestLevel:
    n: int
    S_n: int
    side: int
    d: Real
    z: Real
    u: Real
    y: Real | None
    t_f: Real | None
    dist_d: Real
    dist_d_f: Real
    dist_z: Real
    dist_z_f: Real
    dist_u: Real
    dist_u_f: Real
    dist_y_f: Real | None
    dist_t_f: Real | None


def dist(x) -> Real:
    return abs(x - mpfr("0.5"))


def dist_f(f: FibMap, x) -> Real:
    """|f(x) - f(c)| without cancellation."""
    e = int(f.ell) if gmpy2.is_integer(f.ell) else f.ell
    return f.lam * abs(2 * x - 1) ** e


@at_map_precision
def build_nest(f: FibMap, K: int, check: bool = True) -> list[NestLevel]:
    if check:
        verdict = is_fibonacci_to_depth(f, K)
        if not verdict.ok:
            raise BranchIdentificationError(f"map is not Fibonacci to depth {K}: {verdict}")
    S = fibonacci_times(K + 2)
    c = mpfr("0.5")
    orb = f.orbit(c, S[K] + S[K + 2])
    crit_sides = [0] + [f.side(x) for x in orb[1 : S[K] + 1]]
    tol = mpfr(2) ** (-(f.bits // 2))

    def pull(target, steps, first_side):
        return f.pullback(target, [first_side] + crit_sides[1:steps])

    d = [orb[s] for s in S]
    u = [f.fixed_point()]
    for n in range(1, K + 1):
        prev = u[-1]
        target = prev if f.side(prev) == f.side(d[n - 1]) else f.hat(prev)
        u.append(pull(target, S[n - 1], f.side(d[n])))

    levels = []
    for n in range(K + 1):
        z = pull(c, S[n], f.side(d[n + 1]))
        if check and not same(f.iterate(z, S[n]), c, tol):
            raise BranchIdentificationError(f"pullback z_{n} does not return to c")
        y = orb[S[n] + S[n + 2]]
        t_f = None
        if n >= 1:
            t_f = monotone_branch(f, S[n] - 1, f.lam).hi
            if check and n >= 4 and not same(f.iterate(t_f, S[n] - 1), d[n - 4], tol):
                raise BranchIdentificationError(f"branch endpoint t_{n} does not map to d_{n - 4}")
        levels.append(NestLevel(
            n=n, S_n=S[n], side=f.side(d[n]), d=d[n], z=z, u=u[n], y=y, t_f=t_f,
            dist_d=dist(d[n]), dist_d_f=dist_f(f, d[n]),
            dist_z=dist(z), dist_z_f=dist_f(f, z),
            dist_u=dist(u[n]), dist_u_f=dist_f(f, u[n]),
            dist_y_f=dist_f(f, y) if y is not None else None,
            dist_t_f=abs(t_f - f.lam) if t_f is not None else None,
        ))
    return levels


# --- report -------------------------------------------------------------


@dataclass
class InequalityRow:
    name: str
    n: int
    lhs: Real
    rhs: Real
    kind: str  # "upper": lhs <= rhs, "lower": lhs >= rhs
    admissible: bool = True

    @property
    def margin(self) -> Real:
        with working(bits_of(self.lhs, self.rhs)):
            if self.kind == "upper":
                return self.rhs / self.lhs
            return self.lhs / self.rhs

    @property
    def passed(self) -> bool:
        return self.margin >= 1

    def to_json(self) -> dict:
        return {
            "name": self.name,
            "n": self.n,
            "lhs": to_decimal(self.lhs, 64),
            "rhs": to_decimal(self.rhs, 64),
            "kind": self.kind,
            "margin": to_decimal(self.margin, 64),
            "passed": bool(self.passed),
            "admissible": self.admissible,
        }


@dataclass
class ScalingReport:
    ell: Real
    lam: Real
    K: int
    levels: list[NestLevel]
    bits: int
    rows: list[InequalityRow] = field(default_factory=list)

    @property
    def dist_d_f(self) -> list:
        return [lv.dist_d_f for lv in self.levels]

    @property
    def lambda_f(self) -> dict:
        D = self.dist_d_f
        with working(self.bits):
            return {n: D[n - 2] / D[n] for n in range(2, self.K + 1)}

    @property
    def rho_f(self) -> dict:
        return {n: rho(self, n, min(10, n)) for n in range(1, self.K + 1)}

    def ratio(self, k: int) -> Real:
        D = self.dist_d_f
        with working(self.bits):
            return D[k] / D[k + 1]

    def deepest(self, name: str, count: int = 3) -> list[InequalityRow]:
        mine = sorted((r for r in self.rows if r.name == name and r.admissible), key=lambda r: r.n)
        return mine[-count:]

    def row_names(self) -> list[str]:
        return sorted({r.name for r in self.rows})

    def threshold(self, name: str) -> int | None:
        """Smallest n from which every admissible row of this name passes."""
        mine = sorted((r for r in self.rows if r.name == name and r.admissible), key=lambda r: r.n)
        n0 = None
        for r in reversed(mine):
            if not r.passed:
                break
            n0 = r.n
        return n0


def rho(report: ScalingReport, n: int, N0: int) -> Real:
    """Largest successive ratio dist_d_f[k] / dist_d_f[k+1] over n-N0 <= k < n."""
    if N0 < 1 or N0 > 10:
        raise ValueError("window length must be between 1 and 10")
    if n - N0 < 0 or n > report.K:
        raise DepthError(f"window [{n - N0}, {n}) outside computed depth {report.K}")
    return max(report.ratio(k) for k in range(n - N0, n))


def lambda_check(report: ScalingReport, n: int):
    """(lambda_f[n], passes 3.85, log gap or None, log gap passes 2.7)."""
    if n < 2 or n > report.K:
        raise DepthError(f"n={n} outside [2, {report.K}]")
    D = report.dist_d_f
    with working(report.bits):
        value = D[n - 2] / D[n]
        gap = gmpy2.log(D[n - 4] / D[n]) if n >= 4 else None
    return value, value > LAMBDA_MIN, gap, (gap > LOG_GAP_MIN) if gap is not None else None


def lambda_threshold(report: ScalingReport) -> int | None:
    n0 = None
    for n in range(report.K, 3, -1):
        _, ok, _, ok_gap = lambda_check(report, n)
        if not (ok and ok_gap):
            break
        n0 = n
    return n0


def _ln(x):
    return gmpy2.log(x)


def _two_step_bound(report, f, n, A, B):
    """Right side of the two-step derivative bound at level n."""
    D = report.dist_d_f
    ell = f.ell
    return (B / A) * _ln(D[n - 4] / B) * _ln(D[n] / B) * (D[n - 4] / B) ** (1 / ell)


def _two_step_window_bound(report, f, n, A, B, i):
    r = rho(report, n + i, min(4 + i, 10))
    return (B / A) * (4 + i) * i * _ln(r) ** 2 * r ** ((4 + i) / f.ell)


@at_map_precision
def two_step_checks(f: FibMap, report: ScalingReport) -> list[InequalityRow]:
    K, lv = report.K, report.levels
    D = report.dist_d_f
    ell = f.ell
    rows = []
    for n in range(4, K - 1):
        # a = d_{n+2}, b = y_n; b sits just inside d_n so i = 1
        a, b = lv[n + 2].d, lv[n].y
        A, B = dist_f(f, a), dist_f(f, b)
        lhs = abs(f.deriv_iterate(f.eval(a), lv[n].S_n))
        ok = dist(a) < lv[n].dist_z and lv[n + 1].dist_d <= dist(b) < lv[n].dist_d
        rows.append(InequalityRow("two_step_log", n, lhs, _two_step_bound(report, f, n, A, B), "upper", ok))
        rows.append(InequalityRow("two_step_log_near", n, lhs, _two_step_window_bound(report, f, n, A, B, 1), "upper", ok))
    for n in range(4, K - 3):
        # a = y_{n+1}, b = d_{n+4}, the i = 4 window feeding the next-return bound
        a, b = lv[n + 1].y, lv[n + 4].d
        A, B = dist_f(f, a), dist_f(f, b)
        lhs = abs(f.deriv_iterate(f.eval(a), lv[n].S_n))
        ok = dist(a) < lv[n].dist_z and lv[n + 4].dist_d <= dist(b) < lv[n].dist_d
        rows.append(InequalityRow("two_step_log_far", n, lhs, _two_step_window_bound(report, f, n, A, B, 4), "upper", ok))
    for m in range(7, K - 1):
        lhs = abs(f.deriv_iterate(f.eval(lv[m + 1].d), lv[m].S_n))
        r = rho(report, m + 2, 9)
        rhs = 160 * (D[m + 2] / D[m + 1]) * _ln(r) ** 4 * r ** (13 / ell)
        rows.append(InequalityRow("deriv_next_return", m, lhs, rhs, "upper"))
    for m in range(4, K + 1):
        dcf = abs(f.deriv_iterate(f.lam, lv[m].S_n))
        if m + 1 <= K:
            r = rho(report, m, 4)
            rows.append(InequalityRow("cone_lower", m, dcf, (D[m] / D[m + 1]) * r ** (-4 / ell), "lower"))
        if m + 2 <= K:
            r = rho(report, m + 1, 5)
            rows.append(InequalityRow("cone_upper", m, dcf, 2 * (D[m] / D[m + 2]) * _ln(r) * r ** (1 / ell), "upper"))
    return rows


def rho_infinity(report: ScalingReport) -> Real:
    """Largest successive ratio over the last ten computed levels."""
    K = report.K
    return max(report.ratio(k) for k in range(max(0, K - 10), K))


@at_map_precision
def one_step_checks(f: FibMap, report: ScalingReport) -> list[InequalityRow]:
    K, lv = report.K, report.levels
    D = report.dist_d_f
    ell = f.ell
    rows = []
    r_inf = rho_infinity(report)
    lower = 1 + (1 - gmpy2.exp(-LOG_GAP_MIN)) / (r_inf - 1)
    for n in range(10, K + 1):
        r = rho(report, n, 10)
        dcf = abs(f.deriv_iterate(f.lam, lv[n].S_n))
        rows.append(InequalityRow("onestep_deriv", n, dcf, COMPOSITE * _ln(r) ** 9 * r ** (27 / ell), "upper"))
        rows.append(InequalityRow("onestep_rho", n, r, COMPOSITE * _ln(r) ** 9 * r ** (31 / ell), "upper"))
        if n + 1 <= K:
            rows.append(InequalityRow("onestep_ratio_upper", n, D[n] / D[n + 1],
                                      COMPOSITE * _ln(r) ** 9 * r ** (31 / ell), "upper"))
    for n in range(max(0, K - 10), K):
        rows.append(InequalityRow("onestep_ratio_lower", n, D[n] / D[n + 1], lower, "lower"))
    for n in range(5, K + 1):
        r = rho(report, n, 5)
        rows.append(InequalityRow("return_gap_lower", n, D[n] / lv[n].dist_u_f - 1, (1 - 1 / LOG_GAP_MIN) / r, "lower"))
    one = mpfr(1)
    for n in range(1, K + 1):
        rows.append(InequalityRow("gap_du", n, D[n] / lv[n].dist_u_f, one, "lower"))
        if n + 1 <= K:
            rows.append(InequalityRow("gap_dd", n, D[n] / D[n + 1], one, "lower"))
            rows.append(InequalityRow("gap_uu", n, lv[n].dist_u_f / lv[n + 1].dist_u_f, one, "lower"))
    return rows


def gap_constants(report: ScalingReport, n_min: int = 1) -> dict:
    """Empirical C1, C2: ell times the min and max of the three scale-free gaps."""
    lv = report.levels
    ell = report.ell
    gaps = {"du": [], "dd": [], "uu": []}
    with working(report.bits):
        return _gap_constants(lv, ell, gaps, n_min, report.K)


def _gap_constants(lv, ell, gaps, n_min, K):
    for n in range(n_min, K):
        gaps["du"].append(abs(lv[n].d - lv[n].u) / lv[n].dist_u)
        gaps["dd"].append(abs(lv[n].dist_d - lv[n + 1].dist_d) / lv[n].dist_d)
        gaps["uu"].append(abs(lv[n].dist_u - lv[n + 1].dist_u) / lv[n].dist_u)
    out = {}
    for key, vals in gaps.items():
        out[key] = {"C1": ell * min(vals), "C2": ell * max(vals)}
    return out


def scaling_report(f: FibMap, K: int, levels: list[NestLevel] | None = None) -> ScalingReport:
    if K < 10:
        raise DepthError("inequality tables need depth at least 10")
    levels = levels if levels is not None else build_nest(f, K)
    report = ScalingReport(f.ell, f.lam, K, levels, f.bits)
    report.rows = two_step_checks(f, report) + one_step_checks(f, report)
    return report


def rho_upper_bound(ell, bits: int = 128) -> Real:
    """Largest x with x = 51200 ln^9(x) x^(31/ell); ell may be inf."""
    with working(bits):
        ell = mpfr(ell)
        expo = 31 / ell
        if expo >= 1:
            raise UnboundedError(f"31/ell = {expo} >= 1: no finite largest solution")
        slope = 1 - expo
        c0 = _ln(mpfr(COMPOSITE))

        def h(L):
            return L * slope - c0 - 9 * _ln(L)

        lo = 9 / slope  # h is convex in L with its minimum here
        if h(lo) >= 0:
            return gmpy2.exp(lo)
        hi = 2 * lo
        while h(hi) <= 0:
            hi *= 2
        for _ in range(bits + 20):
            mid = (lo + hi) / 2
            if h(mid) > 0:
                hi = mid
            else:
                lo = mid
        return gmpy2.exp((lo + hi) / 2)


def rho_bound_residual(ell, x) -> Real:
    """Relative residual |x - 51200 ln^9 x x^(31/ell)| / x."""
    with working(x.precision):
        ell = mpfr(ell)
        g = COMPOSITE * _ln(x) ** 9 * x ** (31 / ell)
        return abs(x - g) / x


# --- serialization --------------------------------------------------------

LEVEL_COLUMNS = [
    "n", "S_n", "side", "dist_d", "dist_d_f", "dist_z_f", "dist_u_f", "dist_y_f", "dist_t_f",
    "lambda_f", "ratio_d_f", "ratio_du_f", "rho_f", "rows_passed",
]


def level_rows(report: ScalingReport) -> list[dict]:
    lam_f, rho_f = report.lambda_f, report.rho_f
    out = []
    for lv in report.levels:
        n = lv.n
        mine = [r for r in report.rows if r.n == n and r.admissible]

        def dec(x):
            return to_decimal(x, 64) if x is not None else ""

        with working(report.bits):
            du = lv.dist_d_f / lv.dist_u_f
        out.append({
            "n": n, "S_n": lv.S_n, "side": lv.side,
            "dist_d": dec(lv.dist_d), "dist_d_f": dec(lv.dist_d_f), "dist_z_f": dec(lv.dist_z_f),
            "dist_u_f": dec(lv.dist_u_f), "dist_y_f": dec(lv.dist_y_f), "dist_t_f": dec(lv.dist_t_f),
            "lambda_f": dec(lam_f.get(n)),
            "ratio_d_f": dec(report.ratio(n)) if n < report.K else "",
            "ratio_du_f": dec(du),
            "rho_f": dec(rho_f.get(n)),
            "rows_passed": all(r.passed for r in mine),
        })
    return out


def report_json(report: ScalingReport) -> dict:
    consts = gap_constants(report)
    return {
        "ell": to_decimal(report.ell),
        "lambda_star": to_decimal(report.lam),
        "K": report.K,
        "levels": level_rows(report),
        "inequalities": [r.to_json() for r in report.rows],
        "thresholds": {name: report.threshold(name) for name in report.row_names()},
        "lambda_threshold": lambda_threshold(report),
        "rho_infinity": to_decimal(rho_infinity(report), 64),
        "gap_constants": {k: {kk: to_decimal(vv, 64) for kk, vv in v.items()} for k, v in consts.items()},
    }


def report_csv(report: ScalingReport) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=LEVEL_COLUMNS, lineterminator="\n")
    writer.writeheader()
    for row in level_rows(report):
        writer.writerow(row)
    return buf.getvalue()
