import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sheetwkb.errors import DirectionExcluded, StabilityViolated, ZeroMode
from sheetwkb.mhd_algebra import (A0, SIDES, ReferenceSheet, eigenvector_l, eigenvector_r,
                                  flux_jacobian, hermitian, hermitian_identity_suite,
                                  hessian_apply, jacobian, validate_assumptions)


def _flux(alpha, U):
    """Ideal incompressible MHD flux f_alpha(U) for U = (u, H, q)."""
    u, h, q = U[:3], U[3:6], U[6]
    a = alpha - 1
    mom = u[a] * u - h[a] * h
    mom[a] += q
    ind = u[a] * h - h[a] * u
    return np.concatenate([mom, ind, [u[a]]])


def random_admissible(rng):
    while True:
        vecs = [tuple(rng.uniform(-3, 3, size=2)) + (0.0,) for _ in range(4)]
        p, q = (int(v) for v in rng.integers(-3, 4, size=2))
        if p == 0 and q == 0:
            continue
        try:
            return validate_assumptions(ReferenceSheet(*vecs), p, q, rng.choice(["plus", "minus"]))
        except Exception:
            continue


def test_canonical_values_match_hand_evaluation(canon):
    # tau solves 2 tau^2 + 2 tau (a+ + a-) + a+^2 + a-^2 - b+^2 - b-^2 = 0 with a = +-1, b = (3, 0)
    tau = math.sqrt(7 / 2)
    assert abs(canon.tau - tau) < 1e-12
    assert abs(canon.c[1] - (tau + 1)) < 1e-12 and abs(canon.c[-1] - (tau - 1)) < 1e-12
    assert canon.b == {1: 3.0, -1: 0.0}
    assert abs(canon.nonlinear_coeff - (9 - 4 * tau) / (2 * tau)) < 1e-14
    assert abs(canon.lopatinskii()) < 1e-12


def test_flux_jacobian_matches_finite_differences():
    rng = np.random.default_rng(0)
    U = rng.normal(size=7)
    for alpha in (1, 2, 3):
        J = flux_jacobian(alpha, U)
        h = 1e-6
        fd = np.array([(_flux(alpha, U + h * e) - _flux(alpha, U - h * e)) / (2 * h)
                       for e in np.eye(7)]).T
        assert np.max(np.abs(J - fd)) < 1e-8


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 3), st.integers(0, 2 ** 31 - 1))
def test_quadratic_flux_polarization(alpha, seed):
    rng = np.random.default_rng(seed)
    U0, dU = rng.normal(size=7), rng.normal(size=7)
    U0[[2, 5, 6]] = 0.0
    lhs = flux_jacobian(alpha, U0 + dU) @ dU
    rhs = flux_jacobian(alpha, U0) @ dU + hessian_apply(alpha, dU, dU)
    assert np.allclose(lhs, rhs, atol=1e-12)


def test_eigenvectors_solve_the_normal_mode_problem(canon):
    for side in SIDES:
        A3 = jacobian(side, "A3", canon)
        Acal = jacobian(side, "Acal", canon)
        for k in (-3, -1, 2, 5):
            R = eigenvector_r(canon, side, k)
            L = eigenvector_l(canon, side, k)
            op = -side * abs(k) * A3 + 1j * k * Acal
            assert np.max(np.abs(op @ R)) < 1e-12
            assert np.max(np.abs(op.T @ L)) < 1e-12
            assert abs(hermitian(L, A3 @ R)) < 1e-12
    with pytest.raises(ZeroMode):
        eigenvector_r(canon, 1, 0)


def test_identity_suite_on_random_configs():
    rng = np.random.default_rng(7)
    for _ in range(5):
        cfg = random_admissible(rng)
        rep = hermitian_identity_suite(cfg, modes=(-3, -1, 1, 2, 4), tol=1e-11)
        assert rep["max_deviation"] < 1e-11


def test_assumption_failures():
    with pytest.raises(StabilityViolated):
        validate_assumptions(ReferenceSheet((1, 0, 0), (-1, 0, 0), (0, 0, 0), (0, 0, 0)), 1, 0)
    # direction where |a+ - a-| = |b+ - b-|
    with pytest.raises(DirectionExcluded):
        validate_assumptions(ReferenceSheet((1, 0, 0), (-1, 0, 0), (3, 0, 0), (1, 3, 0)), 1, 0)
    assert A0[6, 6] == 0.0
