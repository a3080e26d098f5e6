import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import random_spectrum
from sheetwkb.amplitude import (TorusSpectrum, bilinear_b, bilinear_b_bruteforce, hj_linearized_solve,
                                hj_solve, kernel_lambda, time_derivatives)
from sheetwkb.errors import GridMismatch, NotSharp, ResonantZeroSum, TruncationMismatch


def test_kernel_values_by_hand():
    # |k1||k2||k1+k2| / (|k1|+|k2|+|k1+k2|)
    assert kernel_lambda(1, 1) == pytest.approx(2 / 4)
    assert kernel_lambda(2, -1) == pytest.approx(2 / 4)
    assert kernel_lambda(3, 2) == pytest.approx(30 / 10)
    with pytest.raises(ResonantZeroSum):
        kernel_lambda(2, -2)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2), st.integers(1, 6), st.integers(0, 2 ** 31 - 1))
def test_bilinear_matches_bruteforce(J, K, seed):
    rng = np.random.default_rng(seed)
    a, b = random_spectrum(rng, J, K), random_spectrum(rng, J, K)
    fast = bilinear_b(a, b).coeffs
    assert np.max(np.abs(fast - bilinear_b_bruteforce(a, b).coeffs)) < 1e-12
    # symmetric in its arguments, and the output is real and sharp
    assert np.max(np.abs(fast - bilinear_b(b, a).coeffs)) < 1e-12
    out = bilinear_b(a, b)
    assert out.reality_defect() < 1e-12
    assert np.max(np.abs(out.coeffs[:, :, K])) < 1e-12


def test_spectrum_evaluation_and_sampling_roundtrip():
    rng = np.random.default_rng(3)
    s = random_spectrum(rng, 1, 3)
    n1, n3 = 8, 16
    y = np.arange(n1) * 2 * np.pi / n1
    th = np.arange(n3) * 2 * np.pi / n3
    vals = s.evaluate(y[:, None, None], y[None, :, None], th[None, None, :])
    back = TorusSpectrum.from_samples(vals, 1, 3)
    assert np.max(np.abs(back.coeffs - s.coeffs)) < 1e-13


def test_solver_rejects_bad_input(canon):
    with pytest.raises(NotSharp):
        hj_solve(TorusSpectrum.from_modes({0: 1.0}, 0, 4), canon, 0.01, 0.1)
    with pytest.raises(GridMismatch):
        hj_solve(TorusSpectrum.cos_theta(0, 4), canon, 0.03, 0.1)
    with pytest.raises(TruncationMismatch):
        TorusSpectrum.cos_theta(0, 4) + TorusSpectrum.cos_theta(0, 5)


def test_exact_time_derivative_matches_trajectory(canon):
    traj = hj_solve(TorusSpectrum.cos_theta(1, 8), canon, 0.001, 0.02)
    d = time_derivatives(traj.state(10), canon, order=2)
    fd = (traj.coeffs[11] - traj.coeffs[9]) / (2 * traj.dt)
    assert np.max(np.abs(d[1].coeffs - fd)) < 1e-5


def test_linearized_solver_matches_directional_derivative(canon):
    psi0 = TorusSpectrum.cos_theta(0, 8)
    pert = TorusSpectrum.from_modes({2: 0.1, -2: 0.1}, 0, 8)
    base = hj_solve(psi0, canon, 0.005, 0.1)
    h = 1e-5
    up = hj_solve(psi0 + pert * h, canon, 0.005, 0.1)
    dn = hj_solve(psi0 - pert * h, canon, 0.005, 0.1)
    lin = hj_linearized_solve(base, None, pert, canon, 0.005, 0.1)
    fd = (up.coeffs[-1] - dn.coeffs[-1]) / (2 * h)
    # nonlinear factor 2 B(psi, .) linearisation
    assert np.max(np.abs(lin.coeffs[-1] - fd)) < 1e-7
