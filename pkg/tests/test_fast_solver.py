import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sheetwkb.errors import RealityViolated, SolvabilityFailed, UnsupportedSourceClass
from sheetwkb.fast_solver import (ExpPoly, FastSource, apply_operator, homogeneous_solution,
                                  kernel_defect, random_fast_solution, solvability_check,
                                  solve_fast_problem)


def _max_source_gap(a: FastSource, b: FastSource, skip_front=False) -> float:
    worst = 0.0
    for side in (1, -1):
        for k in set(a.F[side]) | set(b.F[side]):
            pa, pb = a.F[side].get(k), b.F[side].get(k)
            if pa is None or pb is None:
                worst = max(worst, (pa or pb).max_abs())
            else:
                worst = max(worst, (pa - pb).max_abs())
    for k in set(a.G) | set(b.G):
        ga = a.G.get(k, 0.0)
        gb = b.G.get(k, 0.0)
        worst = max(worst, float(np.max(np.abs(np.asarray(ga) - np.asarray(gb)))))
    return worst


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 4), st.floats(0.3, 4.0), st.integers(0, 3), st.integers(0, 2 ** 31 - 1))
def test_helmholtz_particular_solves_the_ode(k, a, n, seed):
    rng = np.random.default_rng(seed)
    side = 1 if seed % 2 else -1
    src = ExpPoly.monomial(side, rng.normal(size=(2, 7)), n, a)
    P = src.helmholtz_particular(k)
    res = P.d2_dY2() - P.scale(k * k) - src
    Y = side * np.linspace(0, 5, 11)
    assert np.max(np.abs(res.evaluate(Y))) < 1e-9 * max(1.0, src.max_abs())


def test_derivative_and_antiderivative_against_samples():
    rng = np.random.default_rng(0)
    p = ExpPoly.monomial(-1, rng.normal(size=7), 2, 1.5)
    p.add_term(0, 0.7, rng.normal(size=7))
    Y = -np.linspace(0.1, 3, 9)
    h = 1e-6
    fd = (p.evaluate(Y + h) - p.evaluate(Y - h)) / (2 * h)
    assert np.max(np.abs(p.d_dY().evaluate(Y) - fd)) < 1e-7
    assert np.max(np.abs(p.decaying_antiderivative().d_dY().evaluate(Y) - p.evaluate(Y))) < 1e-12
    with pytest.raises(UnsupportedSourceClass):
        ExpPoly.monomial(1, np.ones(7), 0, 0.0).decaying_antiderivative()


def test_homogeneous_solution_lies_in_kernel(canon):
    rng = np.random.default_rng(4)
    psi = {}
    for k in (1, 2, 5):
        v = rng.normal(size=3) + 1j * rng.normal(size=3)
        psi[k], psi[-k] = v, np.conj(v)
    hom = homogeneous_solution(canon, psi, batch=(3,))
    img = apply_operator(hom, canon)
    gap = max([p.max_abs() for s in (1, -1) for p in img.F[s].values()]
              + [float(np.max(np.abs(g))) for g in img.G.values()])
    assert gap < 1e-12
    with pytest.raises(RealityViolated):
        homogeneous_solution(canon, {1: np.ones(3), -1: 2 * np.ones(3)})


def test_round_trip_reproduces_source(canon):
    for seed in range(3):
        sol = random_fast_solution(canon, seed)
        src = apply_operator(sol, canon)
        assert solvability_check(src, canon).ok
        rec = solve_fast_problem(src, canon)
        assert _max_source_gap(apply_operator(rec, canon), src) < 1e-9
        diff = {s: {k: sol.U[s][k] - rec.U[s][k] for k in sol.U[s]} for s in (1, -1)}
        from sheetwkb.fast_solver import FastSolution
        assert kernel_defect(FastSolution(diff, {}, None), canon) < 1e-9


def test_perturbed_boundary_data_is_rejected(canon):
    src = apply_operator(random_fast_solution(canon, 11), canon)
    G = dict(src.G)
    G[2] = G[2] + np.array([1.0, 0, 0, 0, 0])
    G[-2] = np.conj(G[2])
    bad = FastSource(src.F, G, src.y3)
    rep = solvability_check(bad, canon)
    assert not rep.ok and "e" in rep.failing()
    with pytest.raises(SolvabilityFailed):
        solve_fast_problem(bad, canon)
