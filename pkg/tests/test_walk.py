import math
from fractions import Fraction

import gmpy2
import numpy as np
import pytest
from gmpy2 import mpfr
from hypothesis import given, settings, strategies as st

from fibwalk.real import working
from fibwalk.walk import (
    IncrementLaw, InvalidLawError, ScalingConstants, ScalingFailure, SequencePair,
    TailUndeclaredError, choose_rho, chow_sum, chow_threshold, derived_bounds, fit_constants,
    gerlem_check, integr_bound, moment_lower_bounds, moments, random_scaling_pair,
    scaling_ok, simulate_walk, smallmu_bound, validate_scaling,
)

HALF = Fraction(1, 2)


def geometric_pair(P=8):
    a = tuple(Fraction(1, 2 ** i) for i in range(P))
    nu = tuple(Fraction(1, 2 ** i) for i in range(1, P))
    return SequencePair(a, nu, a_tail=HALF, nu_tail=HALF)


def close(x, y, rel=1e-30):
    with working(128):
        return abs(mpfr(x, 128) - mpfr(y, 128)) <= rel * max(abs(mpfr(y, 128)), 1)


# --- constants and sequences --------------------------------------------------


def test_k_plus():
    assert close(ScalingConstants(Fraction(6, 5), Fraction(7, 5)).K_plus, Fraction(12, 7))


def test_constants_validation():
    with pytest.raises(ValueError):
        ScalingConstants(1, 2)
    with pytest.raises(ValueError):
        ScalingConstants(2, Fraction(3, 2))
    with pytest.raises(ValueError):
        ScalingConstants(2, 2, Omega1=0)


def test_sequence_tails():
    pair = geometric_pair()
    assert close(pair.a_at(20), Fraction(1, 2 ** 20))
    assert close(pair.a_tail_sum(3), Fraction(1, 4))
    assert close(pair.nu_total(), 1)
    with pytest.raises(TailUndeclaredError):
        SequencePair((1, HALF), (1,)).a_tail_sum(0)
    with pytest.raises(TailUndeclaredError):
        SequencePair((1,), (HALF,), a_tail=HALF, nu_tail=None).nu_at(5)


# --- scaling condition --------------------------------------------------------


def test_geometric_pair_passes_with_slack():
    consts = ScalingConstants(Fraction(19, 10), Fraction(21, 10), Fraction(1, 4), 2, 3)
    reports = validate_scaling(geometric_pair(), consts)
    assert scaling_ok(reports)


def test_geometric_pair_passes_with_equality():
    consts = ScalingConstants(2, 2, Fraction(1, 4), 2, 3)
    reports = validate_scaling(geometric_pair(), consts)
    assert reports["tail_ratio"].ok
    assert close(reports["tail_ratio"].worst_margin, 1, 1e-25)


def test_constructed_violation_first_index():
    pair = SequencePair((1, 1, Fraction(1, 10)), (1,), a_tail=Fraction(23, 25), nu_tail=0)
    consts = ScalingConstants(Fraction(21, 20), Fraction(3, 2))
    rep = validate_scaling(pair, consts)["tail_ratio"]
    assert not rep.ok and rep.first_violation == (1, 2)


def test_derived_bounds_geometric_equality():
    pair = geometric_pair()
    consts = ScalingConstants(2, 2, Fraction(1, 4), 2, 3)
    out = derived_bounds(pair, consts)
    assert out["tail_share"].ok and out["term_ratio"].ok and out["nu_decay"].ok
    # a_j / sum_{i >= j} a_i = 1 - 1/rho exactly
    assert close(out["tail_share"].worst_margin, 1, 1e-25)


def test_derived_bounds_refuse_invalid_pair():
    pair = SequencePair((1, 1, Fraction(1, 10)), (1,), a_tail=Fraction(23, 25), nu_tail=0)
    with pytest.raises(ScalingFailure):
        derived_bounds(pair, ScalingConstants(Fraction(21, 20), Fraction(3, 2)))


@settings(max_examples=60, deadline=None)
@given(st.integers(min_value=0, max_value=2**32))
def test_random_pairs_satisfy_everything(seed):
    pair, consts = random_scaling_pair(np.random.default_rng(seed))
    assert scaling_ok(validate_scaling(pair, consts))
    out = derived_bounds(pair, consts)
    assert out["tail_share"].ok and out["term_ratio"].ok and out["nu_decay"].ok


def test_fit_constants_is_tight():
    pair = geometric_pair()
    consts = fit_constants(pair)
    assert close(consts.rho_minus, 2, 1e-20) and close(consts.rho_plus, 2, 1e-20)


# --- moments ------------------------------------------------------------------


def test_moments_examples():
    m1, m2 = moments(SequencePair((1,), (0, 0, 0, 0, 1)))
    assert (m1, m2) == (5, 25)
    m1, m2 = moments(SequencePair((1,), (HALF, 0, HALF)))
    assert (m1, m2) == (2, 5)


def test_moments_geometric_tail_closed_form():
    # nu_k = (1 - q) q^(k-1) with q = 1/2, summed directly up to k = 50
    q = HALF
    direct = [sum(k ** p * (1 - q) * q ** (k - 1) for k in range(1, 51)) for p in (1, 2)]
    m1, m2 = moments(SequencePair((1,), (1 - q,), a_tail=HALF, nu_tail=q))
    assert abs(float(m1) - float(direct[0])) < 1e-12
    assert abs(float(m2) - float(direct[1])) < 1e-12 * float(m2)
    assert close(m1, 1 / (1 - q)) and close(m2, (1 + q) / (1 - q) ** 2)


def test_law_moments_match_pair_moments():
    law = IncrementLaw.make(["0", "0", "0.2", "0.7", "0.05"], 0.5)
    m1, m2 = law.moments()
    assert (m1, m2) == (4, Fraction(84, 5))
    pm1, pm2 = moments(law.pair())
    assert close(pm1, m1) and close(pm2, m2)


# --- summation checks ---------------------------------------------------------


def test_gerlem_examples():
    assert gerlem_check(list(range(1, 11)), 1, 10)
    with pytest.raises(ValueError):
        gerlem_check([1, 1, 1, 1], 0, 4)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(min_value=1e-3, max_value=10), min_size=30, max_size=30),
       st.sampled_from([0, 1, 2]))
def test_gerlem_random_increasing(steps, d):
    q = np.cumsum(steps).tolist()
    assert gerlem_check(q, d, 30)


def test_gerlem_infinite_tail():
    q = [1 - 0.5 ** j for j in range(1, 20)]
    assert gerlem_check(q, 1, None, q_inf=1, tail_ratio=0.5)
    with pytest.raises(TailUndeclaredError):
        gerlem_check(q, 1, None)


def test_integr_examples():
    res = integr_bound(Fraction(11, 10), 3)
    assert abs(float(res.rhs) - 2.3412) < 1e-4
    assert res.k_star == 5
    terms = [1 / (1.1 ** k - 1) for k in (4, 5)]
    assert abs(terms[0] - 2.1547) < 1e-4 and abs(terms[1] - 1.6380) < 1e-4
    zero = integr_bound(Fraction(3, 2), 0)
    assert zero.rhs == 0 and zero.k_star == 1
    with pytest.raises(ValueError):
        integr_bound(Fraction(13, 10), 3)


@settings(max_examples=50, deadline=None)
@given(st.integers(min_value=0, max_value=4), st.floats(min_value=0.01, max_value=0.99))
def test_integr_random_valid_region(d, frac):
    upper = 2 ** (1 / d) if d else 2.0
    rho = 1 + frac * (upper - 1)
    res = integr_bound(Fraction(rho), d)
    assert res.passed and res.lhs_partial > res.rhs


def test_choose_rho_examples():
    with working(128):
        assert close(choose_rho(1, 64, 1, 1, 0), 1 + gmpy2.exp(mpfr(-1)) / 2)
        expect = 1 + gmpy2.exp(mpfr(-1024)) / 6
    assert close(choose_rho(4, 1, 1, 1, 2), expect)
    assert choose_rho(2, 64, 1, 1, 0) < choose_rho(1, 64, 1, 1, 0)


def test_smallmu_sign_and_peak():
    Kp, numax, O2 = Fraction(12, 7), Fraction(1, 4), 1
    assert smallmu_bound(3, numax, O2, Kp) <= 0  # O2 numax K+ r >= 1
    E = 2
    with working(128):
        expect = 2 * E * (1 - 2 * E * mpfr(numax.numerator, 128) / numax.denominator * O2 * mpfr(12, 128) / 7)
    assert close(smallmu_bound(2 * E, numax, O2, Kp), expect)


def test_moment_lower_bounds_geometric():
    pair = geometric_pair()
    consts = ScalingConstants(Fraction(19, 10), Fraction(19, 10) + Fraction(1, 100), Fraction(1, 4), 2, 3)
    res = moment_lower_bounds(pair, consts)
    assert res.passed and res.m1 >= res.bigmu_bound


@settings(max_examples=30, deadline=None)
@given(st.integers(min_value=0, max_value=2**32))
def test_moment_bounds_on_random_pairs(seed):
    pair, consts = random_scaling_pair(np.random.default_rng(seed))
    if consts.rho_plus < 2 ** (1 / consts.d if consts.d else 1):
        assert moment_lower_bounds(pair, consts).passed


# --- increment laws -------------------------------------------------------------


def test_law_validation():
    with pytest.raises(InvalidLawError):
        IncrementLaw.make([0.5, 0.4])
    assert IncrementLaw.point_mass(4).moments() == (4, 16)


def test_law_sampling_frequencies():
    law = IncrementLaw.make(["0.1", "0.3", "0.2"], Fraction(2, 3))
    u = np.random.default_rng(1).random(200_000)
    j = law.sample(u)
    assert j.min() >= 1
    for k in range(1, 8):
        p = float(law.probs[k - 1]) if k <= 3 else 0.2 * (2 / 3) ** (k - 3)
        se = math.sqrt(p * (1 - p) / len(u))
        assert abs(np.mean(j == k) - p) < 5 * se


@given(st.floats(min_value=0, max_value=1, exclude_max=True))
def test_sample_is_monotone_in_u(u):
    law = IncrementLaw.make(["0", "0", "0.2", "0.7", "0.05"], 0.5)
    a, b = law.sample(np.array([u, u + (1 - u) / 2]))
    assert a <= b


def test_chow_threshold():
    law = IncrementLaw.make(["0", "0", "0.2", "0.7", "0.05"], 0.5)
    N = chow_threshold(law, 2)
    M = float(max(law.moments()[1], law.shift_moments(2)[1]))
    assert M * chow_sum(N) < 0.5 <= M * chow_sum(N - 1)
    assert abs(chow_sum(10) - (math.pi ** 2 / 6 - sum(1 / j ** 2 for j in range(1, 11)))) < 1e-15


# --- simulator ----------------------------------------------------------------


def test_unit_drift_walk():
    ens = simulate_walk(IncrementLaw.point_mass(4), 2, 0, 10, 200, 500, seed=1, record=3)
    assert ens.escape_fraction == 1
    assert np.all(ens.increment_slope() == 1)
    assert ens.doob_ok
    for tr in ens.traces:
        assert all(m == 0 for m in tr.M)


def test_descending_walk():
    with pytest.warns(UserWarning):
        ens = simulate_walk(IncrementLaw.point_mass(2), 2, 3, 10, 50, 100, seed=1)
    assert ens.escape_fraction == 0
    assert np.all(ens.tau == 7)


def test_simulator_preconditions():
    with pytest.raises(ValueError):
        simulate_walk(IncrementLaw.point_mass(4), 2, 5, 5, 10, 10, seed=1)
    bad = IncrementLaw((Fraction(1, 2),), Fraction(0))
    with pytest.raises(InvalidLawError):
        simulate_walk(bad, 2, 0, 5, 10, 10, seed=1)


LAW = IncrementLaw.make(["0", "0", "0.2", "0.7", "0.05"], 0.5)


def test_seeded_determinism_and_thread_independence():
    a = simulate_walk(LAW, 2, 0, 20, 300, 9000, seed=42, threads=1)
    b = simulate_walk(LAW, 2, 0, 20, 300, 9000, seed=42, threads=3)
    c = simulate_walk(LAW, 2, 0, 20, 300, 9000, seed=43)
    assert np.array_equal(a.phi_final, b.phi_final) and np.array_equal(a.tau, b.tau)
    assert a.summary() == b.summary()
    assert not np.array_equal(a.phi_final, c.phi_final)


def test_martingale_and_second_moment():
    ens = simulate_walk(LAW, 2, 0, 30, 400, 6000, seed=9, record=20)
    assert ens.doob_ok
    assert all(tr.doob_exact() for tr in ens.traces)
    z = ens.martingale_zscores()
    assert len(z) > 0 and np.all(np.abs(z) < 4)
    mean, m2 = LAW.shift_moments(2)
    var = float(m2 - mean ** 2)
    assert ens.increment_sq_mean <= float(LAW.moments()[1])
    assert abs(ens.increment_sq_mean - var) < 0.05 * var


def test_predictable_part_grows_at_unit_rate():
    ens = simulate_walk(LAW, 2, 0, 30, 50, 10, seed=3, record=10)
    for tr in ens.traces:
        steps = len(tr.W) - 1 if tr.tau is None else tr.tau
        assert tr.W[steps] == 30 + steps


def test_state_dependent_law():
    fast, slow = IncrementLaw.point_mass(5), IncrementLaw.point_mass(4)
    ens = simulate_walk(lambda state: fast if state < 20 else slow, 2, 0, 10, 30, 50, seed=2, record=2)
    # +2 per step up to 20, then +1
    assert np.all(ens.phi_final == 20 + 25)
    assert ens.doob_ok and ens.drift is None
