"""Numbered acceptance checks 1-8.

Each test prints one line ``[acceptance N] PASS|FAIL ...`` with the measured
numbers before asserting, so ``pytest -v -s tests/test_acceptance.py`` (or the
captured-output section on failure) shows the full tally.
"""
import importlib.util
import math
import time
from fractions import Fraction
from pathlib import Path

import mpmath
import numpy as np
import pytest
from gmpy2 import mpfr

from fibwalk.combinatorics import is_fibonacci_to_depth, solve_parameter
from fibwalk.distortion import B_FLOOR, distortion_batch
from fibwalk.induced import K0, InducedStepViolation, estimate_transitions, montecarlo_basin
from fibwalk.nest import lambda_check, lambda_threshold, rho_bound_residual, rho_upper_bound
from fibwalk.walk import (
    IncrementLaw, chow_threshold, derived_bounds, gerlem_check, integr_bound,
    random_scaling_pair, simulate_walk,
)

from conftest import DEPTH, partition_for, report_for, solved

ROOT = Path(__file__).resolve().parent.parent
pytestmark = pytest.mark.slow

# frozen output of scripts/solver_oracle.py --ell 2 --tol 1e-18 (k = 12 superstable chains)
ORACLE_LO = "0.9781017497858120254647899"
ORACLE_HI = "0.9781017497858120257069663"


@pytest.fixture
def verdict(capsys):
    def emit(n, ok, detail):
        with capsys.disabled():
            print(f"\n[acceptance {n}] {'PASS' if ok else 'FAIL'} {detail}")
        return ok
    return emit


def load_oracle():
    spec = importlib.util.spec_from_file_location("solver_oracle", ROOT / "scripts" / "solver_oracle.py")
    mod = importlib.util.module_from_spec(spec)
    spec.loader.exec_module(mod)
    return mod


def test_1_parameter_solver(verdict):
    t = time.perf_counter()
    sol = solve_parameter(2, 12)
    elapsed = time.perf_counter() - t
    fib = is_fibonacci_to_depth(sol.fibmap(), 12).ok
    saved = mpmath.mp.prec
    try:
        lo, hi = load_oracle().oracle(2, "1e-16", verbose=False)
        lam = mpmath.mpf(str(sol.lambda_star))
        live = abs(lam - (lo + hi) / 2)
        in_live = lo - mpmath.mpf("1e-15") <= lam <= hi + mpmath.mpf("1e-15")
        frozen = abs(lam - (mpmath.mpf(ORACLE_LO) + mpmath.mpf(ORACLE_HI)) / 2)
    finally:
        mpmath.mp.prec = saved
    ok = fib and in_live and live < 1e-15 and frozen < 1e-15 and elapsed < 120
    verdict(1, ok, f"lambda*={mpmath.nstr(lam, 22)} |oracle mid - lambda*|={mpmath.nstr(live, 3)} "
                   f"(frozen {mpmath.nstr(frozen, 3)}) tol 1e-15, fibonacci={fib}, solve {elapsed:.1f}s < 120s")
    assert ok


def test_2_cross_ratio_and_koebe(verdict):
    parts, ok = [], True
    for ell in (2, 8, 16):
        batch = distortion_batch(solved(ell).fibmap(), 1000, seed=1000 + ell, koebe_samples=10)
        s = batch.summary()
        good = (len(batch.records) == 1000 and batch.min_B >= B_FLOOR
                and len(batch.doubc) == 1000 and s["doubc_failures"] == 0
                and {tau for tau, _, _ in batch.koebe} == {"0.5", "1", "2"} and s["koebe_failures"] == 0)
        ok &= good
        parts.append(f"ell={ell}: min B={float(batch.min_B):.6f} doubc fail={s['doubc_failures']}/1000 "
                     f"koebe fail={s['koebe_failures']}/{len(batch.koebe)} worst ratio/bound={float(s['koebe_worst_ratio_to_bound']):.3f}")
    verdict(2, ok, "B >= 1-1e-12; " + "; ".join(parts))
    assert ok


def test_3_scaling_laws(verdict):
    parts, ok = [], True
    for ell in (2, 8, 16):
        rep = report_for(ell)
        n0 = lambda_threshold(rep)
        good = n0 is not None and n0 <= DEPTH - 3
        worst_lam = worst_gap = None
        if good:
            for n in range(n0, DEPTH + 1):
                value, ok_lam, gap, ok_gap = lambda_check(rep, n)
                good &= ok_lam and ok_gap
                worst_lam = value if worst_lam is None else min(worst_lam, value)
                worst_gap = gap if worst_gap is None else min(worst_gap, gap)
        ok &= good
        parts.append(f"ell={ell}: n0={n0} <= {DEPTH - 3}, min lambda={float(worst_lam):.3f} > 3.85, "
                     f"min log gap={float(worst_gap):.3f} > 2.7")
    verdict(3, ok, f"K={DEPTH}; " + "; ".join(parts))
    assert ok


def test_4_inequality_rows(verdict):
    parts, ok = [], True
    for ell in (2, 8, 16):
        rep = report_for(ell)
        margins = {name: min(r.margin for r in rep.deepest(name)) for name in rep.row_names()}
        good = all(m >= 1 for m in margins.values()) and len(margins) == 14
        ok &= good
        name = min(margins, key=margins.get)
        parts.append(f"ell={ell}: {len(margins)} rows, tightest {name} margin={float(margins[name]):.3f}")
    x = rho_upper_bound("inf")
    res = rho_bound_residual("inf", x)
    bound_ok = x < mpfr("1e21") and res < mpfr("1e-6")
    ok &= bound_ok
    verdict(4, ok, "deepest-3 margins >= 1; " + "; ".join(parts)
            + f"; rho bound(inf)={float(x):.4e} < 1e21 residual={float(res):.1e} < 1e-6")
    assert ok


def test_5_summation_checks(verdict):
    rng = np.random.default_rng(5)
    gerlem = sum(gerlem_check(np.cumsum(rng.uniform(1e-3, 10, 30)).tolist(), int(rng.integers(0, 3)), 30)
                 for _ in range(100))
    integr = 0
    for _ in range(50):
        d = int(rng.integers(0, 5))
        upper = 2 ** (1 / d) if d else 2.0
        res = integr_bound(Fraction(1 + float(rng.uniform(0.01, 0.99)) * (upper - 1)), d)
        integr += res.passed and res.lhs_partial > res.rhs
    anchor = integr_bound(Fraction(11, 10), 3)
    anchor_ok = abs(float(anchor.rhs) - 2.3412) < 1e-4 and anchor.k_star == 5 and anchor.passed
    derived = 0
    for _ in range(1000):
        pair, consts = random_scaling_pair(rng)
        out = derived_bounds(pair, consts)
        derived += all(out[k].ok for k in ("tail_share", "term_ratio", "nu_decay"))
    ok = gerlem == 100 and integr == 50 and anchor_ok and derived == 1000
    verdict(5, ok, f"gerlem {gerlem}/100, integr {integr}/50, anchor rho=1.1 d=3 rhs={float(anchor.rhs):.4f} "
                   f"k*={anchor.k_star}, derived bounds {derived}/1000")
    assert ok


def test_6_martingale_walk(verdict):
    law = IncrementLaw.make(["0", "0", "0.2", "0.7", "0.05"], "0.5")
    k0, r0, s = 2, 0, 40
    m1, _ = law.moments()
    chow = chow_threshold(law, k0)
    t = time.perf_counter()
    ens = simulate_walk(law, k0, r0, s, 2000, 10_000, seed=20240601)
    elapsed = time.perf_counter() - t
    p = ens.escape_fraction
    sigma = math.sqrt(p * (1 - p) / ens.n_walkers)
    slope = float(np.min(ens.slope_at_horizon())) if ens.escaped.any() else 0.0
    ok = (m1 == k0 + 2 and s - r0 >= chow and p >= 0.5 - 3 * sigma and slope >= 0.9
          and ens.doob_ok and elapsed < 60)
    verdict(6, ok, f"mean nu={float(m1)}, s-r0={s - r0} >= chow {chow}, escape={p:.4f} >= {0.5 - 3 * sigma:.4f}, "
                   f"min phi_H/H={slope:.4f} >= 0.9, doob exact={ens.doob_ok}, {elapsed:.1f}s < 60s")
    assert ok


def test_7_induced_walk_bridge(verdict):
    steps, violations, identity = 0, 0, []
    try:
        rep = montecarlo_basin(solved(2).fibmap(), partition_for(2), 100, 500, seed=70)
        steps += sum(len(j) for j in rep.jumps)
        for ell in (8, 16):
            f, part = solved(ell).fibmap(), partition_for(ell)
            for r in range(1, DEPTH):
                steps += estimate_transitions(f, part, r, 2000, seed=100 * ell + r).samples
    except InducedStepViolation:
        violations += 1
    worst = 0.0
    for ell in (2, 16):
        f, part = solved(ell).fibmap(), partition_for(ell)
        for r in (4, 6, 8):
            a = estimate_transitions(f, part, r, 2000, seed=7 * r + ell)
            b = estimate_transitions(f, part, r, 2000, seed=7 * r + ell + 1)
            exact = abs(a.mean_jump() + K0 + 1 - a.m1())
            z = abs(b.mean_jump() + K0 + 1 - a.m1()) / math.hypot(a.jump_stderr(), b.jump_stderr())
            worst = max(worst, z)
            identity.append(exact < 1e-9 and z <= 3)
    ok = steps >= 100_000 and violations == 0 and all(identity)
    verdict(7, ok, f"{steps} induced steps, violations={violations}; drift identity at 6 (ell, r) "
                   f"cells, worst |mean jump + k0 + 1 - m1(nu)| = {worst:.2f} SE <= 3")
    assert ok


def test_8_regime_contrast(verdict):
    args = dict(samples=200, horizon=100, seed=88, r0=3)
    quad = montecarlo_basin(solved(2).fibmap(), partition_for(2), **args)
    high = montecarlo_basin(solved(16).fibmap(), partition_for(16), **args)
    again = montecarlo_basin(solved(16).fibmap(), partition_for(16), **args)
    quad_abs, high_abs = float(quad.absorbed.mean()), float(high.absorbed.mean())
    margin = high_abs - quad_abs
    se = math.sqrt((quad_abs * (1 - quad_abs) + high_abs * (1 - high_abs)) / args["samples"])
    recurrence = float(quad.returned.mean())
    repro = again.summary() == high.summary()
    ok = high.drift_mean() > 0 and margin > 3 * se and recurrence == 1.0 and repro
    verdict(8, ok, f"K={DEPTH} horizon={args['horizon']}: ell=16 drift={high.drift_mean():+.3f} "
                   f"absorbed={high_abs:.3f}, ell=2 absorbed={quad_abs:.3f} recurrence={recurrence:.3f}, "
                   f"margin={margin:.3f} (> 3 SE = {3 * se:.3f}), reproducible={repro}")
    assert ok
