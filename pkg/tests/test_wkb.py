import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sheetwkb import wkb
from sheetwkb.amplitude import TorusSpectrum, hj_solve
from sheetwkb.combinatorics import CutoffFunction
from sheetwkb.errors import (FredholmViolated, FrontEscapesStrip, JumpIncompatible, NotMeanFree,
                             OrderUnsupported)


@pytest.fixture(scope="module")
def short_trajectory(canon):
    return hj_solve(TorusSpectrum.cos_theta(0, 8), canon, 0.005, 0.05)


def test_slow_grid_roundtrip_and_derivative():
    grid = wkb.SlowGrid(3)
    rng = np.random.default_rng(0)
    c = rng.normal(size=(5, 5)) + 1j * rng.normal(size=(5, 5))
    vals = grid.from_spectrum(c)
    assert np.max(np.abs(grid.to_spectrum(vals, 2) - c)) < 1e-13
    d1 = grid.to_spectrum(grid.diff(vals, 0), 2)
    js = np.arange(-2, 3)
    assert np.max(np.abs(d1 - 1j * js[:, None] * c)) < 1e-12
    y = np.array([0.3, 1.7])
    direct = sum(c[a, b] * np.exp(1j * (js[a] * y + js[b] * 0.0)) for a in range(5) for b in range(5))
    assert np.max(np.abs(grid.interp(y) @ vals[:, 0] - direct)) < 1e-12


@settings(max_examples=20, deadline=None)
@given(st.tuples(*[st.integers(0, 2)] * 3), st.floats(-0.6, 0.6))
def test_key_derivative_is_product_rule(key, y):
    key = key + (0,)
    chi = CutoffFunction.polynomial([1, 0.5, -1, 0.25])
    h = 1e-6
    fd = (wkb.key_eval(key, y + h, chi) - wkb.key_eval(key, y - h, chi)) / (2 * h)
    exact = sum(c * wkb.key_eval(k2, y, chi) for c, k2 in wkb.key_derivative(key))
    assert abs(fd - exact) < 1e-5 * max(1.0, abs(exact))


def test_key_derivative_refuses_fourth_cutoff_derivative():
    with pytest.raises(OrderUnsupported):
        wkb.key_derivative((0, 0, 0, 1))


def test_exact_and_finite_difference_jets_agree(canon, short_trajectory):
    exact = wkb.jet_from_trajectory(short_trajectory, 5, canon, "exact")
    fd = wkb.jet_from_trajectory(short_trajectory, 5, canon, "fd")
    assert np.max(np.abs(exact.dpsi2.coeffs - fd.dpsi2.coeffs)) < 1e-7


def test_first_order_conditions_and_rectification(canon, short_trajectory):
    jet = wkb.jet_from_trajectory(short_trajectory, 5, canon)
    rep = wkb.first_order_check(jet, canon)
    assert max(rep.deviations.values()) < 1e-10
    h = wkb.ProfileHierarchy(jet, canon)
    rect = wkb.rectification_report(h)
    assert max(rect.values()) < 1e-10
    assert wkb.pressure_normalization_check(1, h) == 0.0
    with pytest.raises(OrderUnsupported):
        wkb.pressure_normalization_check(4, h)


def test_laplace_recovers_hyperbolic_modes():
    modes = {jp: {"source": {1: None, -1: None},
                  "neumann": {1: 0.5 * np.sinh(-1.0), -1: 0.5 * np.sinh(1.0)},
                  "outer": {1: 0.0, -1: 0.0}, "jump": 0.0} for jp in ((1, 0), (-1, 0))}
    sol = wkb.laplace_strip_solve(modes)
    y = np.linspace(0, 1, 7)
    assert np.max(np.abs(sol.evaluate(1, (1, 0), y) - 0.5 * np.cosh(y - 1))) < 1e-12
    assert np.max(np.abs(sol.evaluate(-1, (1, 0), -y) - 0.5 * np.cosh(1 - y))) < 1e-12
    modes[(1, 0)]["jump"] = 1.0
    with pytest.raises(JumpIncompatible):
        wkb.laplace_strip_solve(modes)


def test_laplace_zero_mode_fredholm_and_normalization():
    # q+ = y^2 / 2: -q'' = -1, q'(0) = 0, q'(1) = 1; q- mirrored
    data = {(0, 0): {"source": {1: lambda y: -np.ones_like(y), -1: lambda y: -np.ones_like(y)},
                     "neumann": {1: 0.0, -1: 0.0}, "outer": {1: 1.0, -1: -1.0}, "jump": 0.0}}
    sol = wkb.laplace_strip_solve(data, normalization=1.0 / 3.0)
    y = np.linspace(0, 1, 5)
    assert np.max(np.abs(sol.evaluate(1, (0, 0), y) - y ** 2 / 2)) < 1e-12
    data[(0, 0)]["outer"][1] = 2.0
    with pytest.raises(FredholmViolated):
        wkb.laplace_strip_solve(data)


def test_wave_roots_are_imaginary_and_mean_is_rejected(canon):
    for jp in ((1, 0), (0, 1), (2, -1)):
        roots = wkb.wave_roots(canon, *jp)
        assert np.max(np.abs(roots.real)) < 1e-12
        assert abs(roots[0] - roots[1]) > 1e-8
    with pytest.raises(NotMeanFree):
        wkb.front_mean_wave_solve(lambda t: np.ones((3, 3)), canon, 1, 0.1, 0.5)


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 2 ** 31 - 1), st.sampled_from([1, -1]))
def test_transport_conserves_energy(seed, side):
    from sheetwkb.mhd_algebra import canon_config
    rng = np.random.default_rng(seed)
    V0 = rng.normal(size=(4, 3, 3)) + 1j * rng.normal(size=(4, 3, 3))
    V = wkb.mean_transport_solve(V0, canon_config(), side, 0.5, 1.0)
    assert abs(np.sum(np.abs(V[-1]) ** 2) - np.sum(np.abs(V0) ** 2)) < 1e-10


def test_admissible_ladder_and_escape(canon):
    assert wkb.admissible_eps(canon, 8) == pytest.approx(1 / 8)
    with pytest.raises(ValueError):
        wkb.admissible_eps(canon, 0)
    big = hj_solve(TorusSpectrum.cos_theta(0, 4, amplitude=2.0), canon, 0.001, 0.002)
    app = wkb.ApproxSolution(1, canon, big, 1.0)
    with pytest.raises(FrontEscapesStrip):
        app.front(0, np.zeros(1), np.zeros(1))
    with pytest.raises(OrderUnsupported):
        wkb.ApproxSolution(3, canon, big, 1.0)


def test_first_order_residual_shrinks(canon, short_trajectory):
    tab = wkb.residual_study(1, short_trajectory, canon, ladder=(16, 32), counts=400)
    interior = tab.sup("interior")
    assert interior[1] < interior[0]
    assert max(tab.sup("walls")) < 1e-10
