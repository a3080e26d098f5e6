from fractions import Fraction

import numpy as np
import pytest
import sympy as sp
from hypothesis import given, settings, strategies as st

from sheetwkb.errors import InversionFailed
from sheetwkb.combinatorics import (CutoffFunction, ProfileFamily, cal_f, cal_f_recursive,
                                    check_length_dependence, chi_expansion, index_sequences,
                                    invert_straightening, lagrange_inversion_oracle,
                                    leibniz_identity_check, q_sharp_value, sample_grid,
                                    verify_first_symmetry, verify_second_symmetry)

CHI = CutoffFunction.polynomial([1, sp.Rational(1, 2), -1, sp.Rational(1, 3)])


def test_index_sequences_are_counted_by_partition_numbers():
    assert [len(index_sequences(w)) for w in range(9)] == [1, 1, 2, 3, 5, 7, 11, 15, 22]
    for mu in index_sequences(6, 3):
        assert mu.weight == 6 and mu.length == 3


def test_q_sharp_small_cases_by_hand():
    # two entries: 2 * 1 * s^0 minus the two singleton terms
    assert q_sharp_value([3, -7]) == 0
    assert q_sharp_value([0, 0, 0]) == 0


@settings(max_examples=40, deadline=None)
@given(st.lists(st.integers(-20, 20), min_size=2, max_size=7))
def test_q_sharp_vanishes_everywhere(eta):
    assert q_sharp_value(eta) == 0


@settings(max_examples=10, deadline=None)
@given(st.lists(st.fractions(min_value=-3, max_value=3, max_denominator=7), min_size=2, max_size=4))
def test_leibniz_identities_for_random_rational_cutoffs(coeffs):
    chi = CutoffFunction.polynomial([sp.Rational(c.numerator, c.denominator) for c in coeffs])
    assert leibniz_identity_check(3, chi)


def test_closed_form_and_recursive_series_agree():
    for L in range(7):
        for dotted in (False, True):
            assert cal_f(L, CHI, dotted).poly == cal_f_recursive(L, CHI, dotted)


def test_bump_cutoff_properties():
    bump = CutoffFunction.bump()
    y = np.array([-0.3, 0.0, 0.2, 0.7, -0.9])
    assert np.allclose(bump(y), [1, 1, 1, 0, 0])
    # derivative against centred differences in the transition zone
    z = np.linspace(-0.6, 0.6, 13)
    h = 1e-6
    fd = (bump(z + h) - bump(z - h)) / (2 * h)
    assert np.max(np.abs(bump.derivative(z, 1) - fd)) < 1e-5


def test_straightening_inversion_roundtrip():
    bump = CutoffFunction.bump()
    for y3 in np.linspace(-0.9, 0.9, 7):
        x3 = float(invert_straightening(bump, y3, 0.1))
        assert abs(x3 - float(bump(x3)) * 0.1 - y3) < 1e-12
    # the bump has slope up to 6, so a shift of 0.2 folds the map
    with pytest.raises(InversionFailed):
        invert_straightening(bump, -0.6, 0.2)


def test_coefficients_depend_only_on_length():
    assert check_length_dependence(5, CHI)


def test_expansion_matches_inversion_oracle_dotted():
    prof = ProfileFamily.random(4, 2)
    rng = np.random.default_rng(0)
    t, y1, y2, th = rng.uniform(0, 6, (4, 20))
    y3 = rng.uniform(-0.9, 0.9, 20)
    for m in range(4):
        a = chi_expansion(m, CutoffFunction.bump(), prof, dotted=True)(t, y1, y2, th, y3)
        b = lagrange_inversion_oracle(m, CutoffFunction.bump(), prof, dotted=True)(t, y1, y2, th, y3)
        assert np.max(np.abs(a - b)) < 1e-7


def test_symmetry_reports_small_grid():
    prof = ProfileFamily.random(4, 5)
    pts = sample_grid(6, 1, (-0.5, 0.5))
    chi = CutoffFunction.polynomial([1, 0.5, -1, 0.25])
    assert verify_first_symmetry(4, chi, prof, pts).max_deviation < 1e-9
    assert verify_second_symmetry(4, chi, prof, pts).max_deviation < 1e-9
