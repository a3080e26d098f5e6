"""Per-mode solver and solvability checker for the fast problem.

On each side s = +1 / -1 of the sheet the fast unknown U = (u, H, q) depends on
the fast normal variable Y3 (s Y3 > 0) and on theta.  For the Fourier mode k in
theta the fast system reads

    A3 dU/dY3 + i k Acal U = F(k),     dH3/dY3 + i k xi.H = F8(k),

with jump conditions on the double trace y3 = Y3 = 0

    u3+ - c+ d_theta psi = G1,  H3+ - b+ d_theta psi = G2,
    u3- - c- d_theta psi = G3,  H3- - b- d_theta psi = G4,  q+ - q- = G5.

Profiles are kept in closed form as finite sums of s^n exp(-a s) terms with
s = |Y3| (class ExpPoly); a = 0 terms are the residual (Y3-independent) part.
Every Y3 derivative, decaying antiderivative, Helmholtz solve and duality
integral is exact in this class.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import RealityViolated, SolvabilityFailed, UnsupportedSourceClass
from .mhd_algebra import (SIDES, FrequencyConfig, eigenvector_l, eigenvector_r,
                          hermitian, jacobian)

ALGEBRAIC_TOL = 1e-10
COMPOSED_TOL = 1e-8
_RATE_DIGITS = 12


def _rate(a: float) -> float:
    a = round(float(a), _RATE_DIGITS)
    if a < 0:
        raise UnsupportedSourceClass(f"growing exponential rate {a}")
    return a + 0.0


# ------------------------------------------------------------ closed-form profiles

@dataclass
class ExpPoly:
    """sum_{(n, a)} coeff[n, a] s^n exp(-a s), s = side * Y3 >= 0.

    Coefficients have shape batch + (ncomp,).  The (0, 0.0) term is the
    residual part; every other term must have a > 0.
    """
    side: int
    batch: tuple
    ncomp: int
    terms: dict = field(default_factory=dict)

    @classmethod
    def zeros(cls, side, batch, ncomp) -> "ExpPoly":
        return cls(int(side), tuple(batch), int(ncomp), {})

    @classmethod
    def monomial(cls, side, coeff, n: int = 0, a: float = 0.0) -> "ExpPoly":
        coeff = np.asarray(coeff, dtype=complex)
        out = cls(int(side), coeff.shape[:-1], coeff.shape[-1], {})
        out.add_term(n, a, coeff)
        return out

    def add_term(self, n: int, a: float, coeff):
        a = _rate(a)
        if a == 0.0 and n != 0:
            raise UnsupportedSourceClass("polynomial growth in Y3 is not representable")
        coeff = np.broadcast_to(np.asarray(coeff, dtype=complex), self.batch + (self.ncomp,))
        key = (int(n), a)
        if key in self.terms:
            self.terms[key] = self.terms[key] + coeff
        else:
            self.terms[key] = coeff.copy()
        return self

    def copy(self) -> "ExpPoly":
        return ExpPoly(self.side, self.batch, self.ncomp,
                       {k: v.copy() for k, v in self.terms.items()})

    def _check(self, other: "ExpPoly"):
        if other.side != self.side or other.ncomp != self.ncomp:
            raise ValueError("incompatible ExpPoly operands")

    def __add__(self, other: "ExpPoly") -> "ExpPoly":
        self._check(other)
        batch = np.broadcast_shapes(self.batch, other.batch)
        out = ExpPoly(self.side, batch, self.ncomp, {})
        for src in (self, other):
            for (n, a), c in src.terms.items():
                out.add_term(n, a, c)
        return out

    def __neg__(self) -> "ExpPoly":
        return self.scale(-1.0)

    def __sub__(self, other: "ExpPoly") -> "ExpPoly":
        return self + (-other)

    def scale(self, factor) -> "ExpPoly":
        """Multiply by a scalar or by an array broadcasting against batch + (ncomp,)."""
        factor = np.asarray(factor)
        out = ExpPoly(self.side, self.batch, self.ncomp, {})
        for key, c in self.terms.items():
            val = c * factor
            out.batch = val.shape[:-1]
            out.terms[key] = val
        if not self.terms:
            out.batch = np.broadcast_shapes(self.batch + (self.ncomp,), factor.shape)[:-1]
        return out

    def __mul__(self, factor) -> "ExpPoly":
        return self.scale(factor)

    __rmul__ = __mul__

    def times(self, other: "ExpPoly") -> "ExpPoly":
        """Pointwise product (components broadcast, e.g. scalar times vector)."""
        if other.side != self.side:
            raise ValueError("product of profiles on different sides")
        ncomp = max(self.ncomp, other.ncomp)
        batch = np.broadcast_shapes(self.batch, other.batch)
        out = ExpPoly(self.side, batch, ncomp, {})
        for (n1, a1), c1 in self.terms.items():
            for (n2, a2), c2 in other.terms.items():
                out.add_term(n1 + n2, a1 + a2, c1 * c2)
        return out

    def apply(self, matrix) -> "ExpPoly":
        """Apply a (mout, ncomp) matrix to the component axis."""
        matrix = np.asarray(matrix)
        out = ExpPoly(self.side, self.batch, matrix.shape[0], {})
        for key, c in self.terms.items():
            out.terms[key] = c @ matrix.T
        return out

    def component(self, idx) -> "ExpPoly":
        """Select components (int or list) keeping a component axis."""
        idx = [idx] if np.isscalar(idx) else list(idx)
        out = ExpPoly(self.side, self.batch, len(idx), {})
        for key, c in self.terms.items():
            out.terms[key] = c[..., idx]
        return out

    @staticmethod
    def stack(parts) -> "ExpPoly":
        """Concatenate the component axes of several profiles."""
        side = parts[0].side
        batch = np.broadcast_shapes(*(p.batch for p in parts))
        ncomp = sum(p.ncomp for p in parts)
        keys = set().union(*(p.terms for p in parts))
        out = ExpPoly(side, batch, ncomp, {})
        for key in keys:
            cols = [np.broadcast_to(p.terms.get(key, np.zeros(1, complex)), batch + (p.ncomp,))
                    for p in parts]
            out.terms[key] = np.concatenate(cols, axis=-1)
        return out

    def map_coeffs(self, fn) -> "ExpPoly":
        """Apply fn to every coefficient array (used for batch-axis operators)."""
        out = ExpPoly(self.side, self.batch, self.ncomp, {})
        for key, c in self.terms.items():
            out.terms[key] = np.asarray(fn(c), dtype=complex)
            out.batch = out.terms[key].shape[:-1]
        return out

    # --- splitting
    def residual(self) -> "ExpPoly":
        out = ExpPoly(self.side, self.batch, self.ncomp, {})
        if (0, 0.0) in self.terms:
            out.terms[(0, 0.0)] = self.terms[(0, 0.0)].copy()
        return out

    def star(self) -> "ExpPoly":
        out = ExpPoly(self.side, self.batch, self.ncomp, {})
        for key, c in self.terms.items():
            if key != (0, 0.0):
                out.terms[key] = c.copy()
        return out

    def residual_value(self) -> np.ndarray:
        return self.terms.get((0, 0.0), np.zeros(self.batch + (self.ncomp,), complex))

    # --- calculus in Y3
    def d_dY(self) -> "ExpPoly":
        """dU/dY3 = side * dU/ds."""
        out = ExpPoly(self.side, self.batch, self.ncomp, {})
        for (n, a), c in self.terms.items():
            if n:
                out.add_term(n - 1, a, self.side * n * c)
            if a:
                out.add_term(n, a, -self.side * a * c)
        return out

    def d2_dY2(self) -> "ExpPoly":
        return self.d_dY().d_dY()

    def decaying_antiderivative(self) -> "ExpPoly":
        """Antiderivative in Y3 vanishing as |Y3| -> infinity (= -side * int_s^inf)."""
        out = ExpPoly(self.side, self.batch, self.ncomp, {})
        for (n, a), c in self.terms.items():
            if a == 0.0:
                raise UnsupportedSourceClass("residual part has no decaying antiderivative")
            for i in range(n + 1):
                w = math.factorial(n) / (math.factorial(i) * a ** (n - i + 1))
                out.add_term(i, a, -self.side * w * c)
        return out

    def helmholtz_particular(self, k: int) -> "ExpPoly":
        """A decaying solution P of P'' - k^2 P = self (star part only)."""
        kk = float(abs(k))
        out = ExpPoly(self.side, self.batch, self.ncomp, {})
        for (n, a), c in self.terms.items():
            if a == 0.0:
                raise UnsupportedSourceClass("residual part in a Helmholtz source")
            p = np.zeros(n + 3)
            if abs(a - kk) > 1e-12:
                # (i+2)(i+1) p_{i+2} - 2a (i+1) p_{i+1} + (a^2 - k^2) p_i = delta_{in}
                for i in range(n, -1, -1):
                    rhs = (1.0 if i == n else 0.0) - (i + 2) * (i + 1) * p[i + 2] \
                        + 2 * a * (i + 1) * p[i + 1]
                    p[i] = rhs / (a * a - kk * kk)
            else:
                for i in range(n, -1, -1):
                    rhs = (i + 2) * (i + 1) * p[i + 2] - (1.0 if i == n else 0.0)
                    p[i + 1] = rhs / (2 * a * (i + 1))
            for i, pi in enumerate(p):
                if pi:
                    out.add_term(i, a, pi * c)
        return out

    # --- evaluation
    def trace(self) -> np.ndarray:
        """Value at Y3 = 0."""
        out = np.zeros(self.batch + (self.ncomp,), complex)
        for (n, a), c in self.terms.items():
            if n == 0:
                out = out + c
        return out

    def evaluate(self, Y3) -> np.ndarray:
        """Values at the fast points Y3 (appended as a new axis before components)."""
        s = self.side * np.asarray(Y3, dtype=float)
        if np.any(s < -1e-14):
            raise ValueError("Y3 values on the wrong side")
        s = np.maximum(s, 0.0)
        out = np.zeros(self.batch + (s.size, self.ncomp), complex)
        for (n, a), c in self.terms.items():
            out = out + c[..., None, :] * (s ** n * np.exp(-a * s))[:, None]
        return out

    def laplace_weight(self, rate: float) -> np.ndarray:
        """int_0^inf exp(-rate s) (profile)(s) ds in closed form."""
        out = np.zeros(self.batch + (self.ncomp,), complex)
        for (n, a), c in self.terms.items():
            tot = a + rate
            if tot <= 0:
                raise UnsupportedSourceClass("non-integrable weighted profile")
            out = out + c * (math.factorial(n) / tot ** (n + 1))
        return out

    def max_abs(self) -> float:
        return max((float(np.max(np.abs(c), initial=0.0)) for c in self.terms.values()),
                   default=0.0)

    def take(self, index, axis: int = 0) -> "ExpPoly":
        """Select one entry along a batch axis (dropping that axis)."""
        out = ExpPoly(self.side, self.batch[:axis] + self.batch[axis + 1:], self.ncomp, {})
        for key, c in self.terms.items():
            out.terms[key] = np.take(c, index, axis=axis)
        return out


# ------------------------------------------------------------ source / solution containers

@dataclass
class FastSource:
    """Interior sources F (components F1..F7, F8) per side and mode, boundary data G per mode.

    F[side][k] is an ExpPoly with 8 components.  G[k] has shape trace_batch + (5,).
    When y3 is given, batch axis 0 of every interior profile samples the slow
    normal variable at these values, and the double trace uses y3 = 0.
    """
    F: dict
    G: dict
    y3: np.ndarray | None = None

    def modes(self) -> list:
        ks = set(self.G)
        for side in SIDES:
            ks |= set(self.F.get(side, {}))
        return sorted(ks)

    def interior(self, side, k) -> ExpPoly | None:
        return self.F.get(side, {}).get(k)

    def boundary(self, k, trace_batch) -> np.ndarray:
        return self.G.get(k, np.zeros(trace_batch + (5,), complex))


@dataclass
class FastSolution:
    """U[side][k]: 7-component ExpPoly; psi_modes[k]: front modes entering the jump."""
    U: dict
    psi_modes: dict = field(default_factory=dict)
    y3: np.ndarray | None = None

    def modes(self) -> list:
        ks = set(self.psi_modes)
        for side in SIDES:
            ks |= set(self.U.get(side, {}))
        return sorted(ks)


def _trace_index(y3):
    if y3 is None:
        return None
    y3 = np.asarray(y3, float)
    idx = int(np.argmin(np.abs(y3)))
    if abs(y3[idx]) > 1e-14:
        raise SolvabilityFailed("the slow normal grid must contain y3 = 0")
    return idx


def _double_trace(profile: ExpPoly, y3) -> np.ndarray:
    """Value at y3 = Y3 = 0, shape trace_batch + (ncomp,)."""
    idx = _trace_index(y3)
    tr = profile.trace()
    return tr if idx is None else tr[idx]


def _slow_trace(arr: np.ndarray, y3) -> np.ndarray:
    idx = _trace_index(y3)
    return arr if idx is None else arr[idx]


def _extend_in_y3(arr: np.ndarray, y3) -> np.ndarray:
    """Broadcast trace data along the y3 batch axis (y3-independent extension)."""
    return arr if y3 is None else np.broadcast_to(arr[None], (len(y3),) + arr.shape)


def _boundary_vector(config: FrequencyConfig) -> np.ndarray:
    return -np.array([config.c[1], config.b[1], config.c[-1], config.b[-1], 0.0])


# ------------------------------------------------------------ forward operator

def apply_operator(sol: FastSolution, config: FrequencyConfig) -> FastSource:
    """Forward image (F, F8, G) of a fast solution, including the front term."""
    F = {side: {} for side in SIDES}
    for side in SIDES:
        A3 = jacobian(side, "A3", config)
        Acal = jacobian(side, "Acal", config)
        xi = np.zeros(7)
        xi[3:5] = config.xi
        for k, U in sol.U.get(side, {}).items():
            main = U.d_dY().apply(A3) + U.apply(1j * k * Acal)
            div = U.d_dY().component(5) + U.apply((1j * k * xi)[None, :])
            F[side][k] = ExpPoly.stack([main, div])
    G = {}
    bvec = _boundary_vector(config)
    for k in sol.modes():
        rows = None
        for side in SIDES:
            U = sol.U.get(side, {}).get(k)
            if U is None:
                continue
            tr = _double_trace(U, sol.y3)
            vals = np.stack([tr[..., 2], tr[..., 5], tr[..., 6]], axis=-1)
            part = np.zeros(vals.shape[:-1] + (5,), complex)
            if side == 1:
                part[..., 0], part[..., 1], part[..., 4] = vals[..., 0], vals[..., 1], vals[..., 2]
            else:
                part[..., 2], part[..., 3], part[..., 4] = vals[..., 0], vals[..., 1], -vals[..., 2]
            rows = part if rows is None else rows + part
        if k in sol.psi_modes:
            front = 1j * k * np.asarray(sol.psi_modes[k], complex)[..., None] * bvec
            rows = front if rows is None else rows + front
        if rows is not None:
            G[k] = rows
    return FastSource(F, G, sol.y3)


# ------------------------------------------------------------ solvability

@dataclass
class SolvabilityReport:
    deviations: dict
    tol: float

    @property
    def passed(self) -> dict:
        return {name: dev < self.tol for name, dev in self.deviations.items()}

    @property
    def ok(self) -> bool:
        return all(self.passed.values())

    def failing(self) -> list:
        return [name for name, ok in self.passed.items() if not ok]


def orthogonality_defect(src: FastSource, k: int, config: FrequencyConfig) -> np.ndarray:
    """Left-hand side of the orthogonality condition at mode k != 0 (trace batch)."""
    total = 0.0
    for side in SIDES:
        prof = src.interior(side, k)
        if prof is None:
            continue
        L = eigenvector_l(config, side, k)
        w = prof.component(list(range(7))).laplace_weight(abs(k))
        w = _slow_trace(w, src.y3)
        total = total + side * hermitian(L, w)
    trace_batch = np.shape(total) if np.ndim(total) else ()
    G = _as_trace(src.boundary(k, trace_batch), trace_batch)
    total = (total + config.ell1[1] * G[..., 0] + config.ell2[1] * G[..., 1]
             + config.ell1[-1] * G[..., 2] + config.ell2[-1] * G[..., 3]
             - 1j * config.tau * np.sign(k) * G[..., 4])
    return np.asarray(total)


def _as_trace(G, trace_batch):
    return np.broadcast_to(G, np.broadcast_shapes(np.shape(G)[:-1], trace_batch) + (5,))


def solvability_check(src: FastSource, config: FrequencyConfig, tol: float = ALGEBRAIC_TOL,
                      modes=None) -> SolvabilityReport:
    """Deviations of the five solvability conditions (a)-(e).

    (a) boundary compatibility of F6, (b) vanishing residual slow means,
    (c) fast-mean relations, (d) divergence compatibility, (e) orthogonality
    for every k != 0 in `modes` (default: all modes present).
    """
    dev = {"a": 0.0, "b": 0.0, "c": 0.0, "d": 0.0, "e": 0.0}
    ks = src.modes() if modes is None else list(modes)
    xi1, xi2 = config.xi
    for side in SIDES:
        b, c = config.b[side], config.c[side]
        u0, h0 = config.sheet.velocity(side), config.sheet.field(side)
        for k, prof in src.F.get(side, {}).items():
            # (d): dF6/dY3 + i k xi_j F_{3+j} - i k tau F8 = 0
            comb = np.zeros(8, complex)
            comb[3], comb[4], comb[7] = 1j * k * xi1, 1j * k * xi2, -1j * k * config.tau
            d_expr = prof.component(5).d_dY() + prof.apply(comb[None, :])
            dev["d"] = max(dev["d"], d_expr.max_abs())
            if k == 0:
                res = prof.residual_value()
                dev["b"] = max(dev["b"], float(np.max(np.abs(res), initial=0.0)))
                star = prof.star()
                rel = np.zeros((4, 8), complex)
                for j in range(2):
                    rel[j, 6], rel[j, 7], rel[j, j] = u0[j], -h0[j], -1.0
                    rel[2 + j, 6], rel[2 + j, 7], rel[2 + j, 3 + j] = h0[j], -u0[j], -1.0
                dev["c"] = max(dev["c"], star.apply(rel).max_abs())
                continue
            tr = _double_trace(prof, src.y3)
            G = src.boundary(k, tr.shape[:-1])
            g_up, g_hp = (G[..., 0], G[..., 1]) if side == 1 else (G[..., 2], G[..., 3])
            a_dev = tr[..., 5] - 1j * k * (-b * g_up + c * g_hp)
            dev["a"] = max(dev["a"], float(np.max(np.abs(a_dev), initial=0.0)))
    for k in ks:
        if k == 0:
            continue
        if k not in ks:
            continue
        dev["e"] = max(dev["e"], float(np.max(np.abs(orthogonality_defect(src, k, config)),
                                               initial=0.0)))
    return SolvabilityReport(dev, tol)


# ------------------------------------------------------------ homogeneous solutions

def homogeneous_solution(config: FrequencyConfig, psi_modes: dict, free_parts=None,
                         batch=(), y3=None, gamma_profile=None) -> FastSolution:
    """Surface-wave solution gamma(k) exp(-|k| s + i k theta) R(k) with gamma(y3=0, k) = side |k| psi(k).

    free_parts may give {"residual": {side: array(batch + (7,))},
    "tangential": {side: ExpPoly}} added to the zero mode; the residual slow
    mean must satisfy the homogeneous jump conditions.  gamma_profile(y3)
    multiplies gamma along the y3 batch axis (default: constant).
    """
    for k, v in psi_modes.items():
        if k == 0:
            continue
        partner = psi_modes.get(-k)
        if partner is None or np.max(np.abs(np.conj(partner) - v), initial=0.0) > 1e-12 * max(
                1.0, float(np.max(np.abs(v), initial=0.0))):
            raise RealityViolated(f"psi modes are not conjugate-symmetric at k={k}")
    U = {side: {} for side in SIDES}
    for k, psi in psi_modes.items():
        if k == 0:
            continue
        psi = np.asarray(psi, complex)
        for side in SIDES:
            gamma = side * abs(k) * psi
            if y3 is not None:
                prof = np.ones(len(y3)) if gamma_profile is None else gamma_profile(np.asarray(y3))
                gamma = prof.reshape((-1,) + (1,) * psi.ndim) * gamma[None]
            coeff = gamma[..., None] * eigenvector_r(config, side, k)
            U[side][k] = ExpPoly.monomial(side, coeff, 0, abs(k))
    if free_parts:
        for side, arr in free_parts.get("residual", {}).items():
            arr = np.asarray(arr, complex)
            zero = U[side].get(0, ExpPoly.zeros(side, arr.shape[:-1], 7))
            U[side][0] = zero + ExpPoly.monomial(side, arr)
        for side, prof in free_parts.get("tangential", {}).items():
            mask = np.diag([1, 1, 0, 1, 1, 0, 0]).astype(complex)
            zero = U[side].get(0, ExpPoly.zeros(side, prof.batch, 7))
            U[side][0] = zero + prof.star().apply(mask)
    psi_full = {k: np.asarray(v, complex) for k, v in psi_modes.items()}
    return FastSolution(U, psi_full, y3)


# ------------------------------------------------------------ particular solutions

def solve_zero_mode(src: FastSource, config: FrequencyConfig, cutoff=None,
                    tol: float = COMPOSED_TOL) -> dict:
    """Zero-mode particular solution with vanishing tangential fast means.

    Fast means of u3, H3, q are decaying antiderivatives of F7, F8, F3.  A
    residual slow mean (u3, H3, q) fixes the jump conditions; it is multiplied
    by cutoff(y3) (a function with cutoff(0) = 1, vanishing near y3 = +-1) when
    the slow normal grid is given.  The pressure jump is split evenly.
    Returns {side: ExpPoly}.
    """
    out = {}
    probes = [src.interior(side, 0) for side in SIDES]
    if all(p is None for p in probes):
        return out
    for side in SIDES:
        prof = src.interior(side, 0)
        if prof is None:
            continue
        if float(np.max(np.abs(prof.residual_value()), initial=0.0)) > tol:
            raise SolvabilityFailed("condition (b): residual slow mean of the source is nonzero")
        star = prof.star()
        cols = {2: star.component(6), 5: star.component(7), 6: star.component(2)}
        U = ExpPoly.zeros(side, prof.batch, 7)
        for col, comp in cols.items():
            e = np.zeros((7, 1))
            e[col, 0] = 1.0
            U = U + comp.decaying_antiderivative().apply(e)
        out[side] = U
    trace_batch = None
    traces = {}
    for side, U in out.items():
        traces[side] = _double_trace(U, src.y3)
        trace_batch = traces[side].shape[:-1]
    G = src.boundary(0, trace_batch)
    lift = {}
    for side in SIDES:
        tr = traces.get(side, np.zeros(trace_batch + (7,), complex))
        vec = np.zeros(trace_batch + (7,), complex)
        g_u, g_h = (G[..., 0], G[..., 1]) if side == 1 else (G[..., 2], G[..., 3])
        vec[..., 2] = g_u - tr[..., 2]
        vec[..., 5] = g_h - tr[..., 5]
        lift[side] = vec
    jump = G[..., 4] - traces.get(1, np.zeros(trace_batch + (7,)))[..., 6] \
        + traces.get(-1, np.zeros(trace_batch + (7,)))[..., 6]
    lift[1][..., 6] = 0.5 * jump
    lift[-1][..., 6] = -0.5 * jump
    for side in SIDES:
        vec = _extend_in_y3(lift[side], src.y3)
        if src.y3 is not None and cutoff is not None:
            weight = np.asarray(cutoff(np.asarray(src.y3)), float)
            vec = vec * weight.reshape((-1,) + (1,) * (vec.ndim - 1))
        base = out.get(side, ExpPoly.zeros(side, vec.shape[:-1], 7))
        out[side] = base + ExpPoly.monomial(side, vec)
    return out


@dataclass
class ModeSolution:
    U: dict            # side -> ExpPoly (7 comps)
    kappa: dict        # side -> trace-batch array
    pressure_source: dict  # side -> ExpPoly scalar source of the pressure equation


def _residual_solve(src: FastSource, k: int, config: FrequencyConfig) -> dict:
    out = {}
    for side in SIDES:
        prof = src.interior(side, k)
        if prof is None:
            continue
        Acal_inv = np.linalg.inv(jacobian(side, "Acal", config))
        res = prof.residual().component(list(range(7)))
        out[side] = res.apply(Acal_inv / (1j * k))
    return out


def solve_oscillating_mode(src: FastSource, k: int, config: FrequencyConfig,
                           check: bool = True, tol: float = COMPOSED_TOL) -> ModeSolution:
    """Particular solution at mode k != 0 with zero front term.

    Residual part (i k Acal)^{-1} F_res; surface-wave part from the pressure
    equation Q'' - k^2 Q = S with
    S = dF3/dY3 - i k (a + c) F7 + 2 i k b F8 + i k xi_j F_j,
    the Neumann data of the normal momentum equation fixing the coefficient
    kappa of exp(-|k| s) at y3 = 0 (extended independently of y3), tangential
    components from the two tangential 2x2 systems and normal components as
    decaying antiderivatives of the divergence relations.
    """
    if k == 0:
        raise ValueError("use solve_zero_mode for k = 0")
    if check:
        report = solvability_check(src, config, tol=tol, modes=[k])
        bad = [n for n in report.failing() if n in ("a", "d", "e")]
        if bad:
            raise SolvabilityFailed(f"mode {k}: conditions {bad} fail "
                                    f"({ {n: report.deviations[n] for n in bad} })")
    kk = abs(k)
    residual = _residual_solve(src, k, config)
    # boundary data left for the surface-wave part
    trace_batch = None
    for side in SIDES:
        prof = src.interior(side, k)
        if prof is not None:
            trace_batch = _double_trace(prof, src.y3).shape[:-1]
    if trace_batch is None:
        trace_batch = np.shape(src.G[k])[:-1]
    G = np.array(src.boundary(k, trace_batch), dtype=complex)
    for side, R in residual.items():
        tr = _double_trace(R, src.y3)
        if side == 1:
            G[..., 0] -= tr[..., 2]
            G[..., 1] -= tr[..., 5]
            G[..., 4] -= tr[..., 6]
        else:
            G[..., 2] -= tr[..., 2]
            G[..., 3] -= tr[..., 5]
            G[..., 4] += tr[..., 6]
    U, kappa, sources = {}, {}, {}
    xi1, xi2 = config.xi
    for side in SIDES:
        prof = src.interior(side, k)
        batch = prof.batch if prof is not None else (
            (len(src.y3),) + trace_batch if src.y3 is not None else trace_batch)
        star = prof.star() if prof is not None else ExpPoly.zeros(side, batch, 8)
        a, b, c = config.a[side], config.b[side], config.c[side]
        u0, h0 = config.sheet.velocity(side), config.sheet.field(side)
        comb = np.zeros(8, complex)
        comb[0], comb[1] = 1j * k * xi1, 1j * k * xi2
        comb[6], comb[7] = -1j * k * (a + c), 2j * k * b
        S = star.component(2).d_dY() + star.apply(comb[None, :])
        sources[side] = S
        P = S.helmholtz_particular(k)
        P_tr, dP_tr = P.trace(), P.d_dY().trace()          # d/dY = side d/ds
        # Green-function normalization alpha (per y3) and Neumann coefficient at y3 = 0
        alpha = (side * dP_tr - kk * P_tr) / (2 * kk)
        F3_0 = _double_trace(star, src.y3)[..., 2]
        g_u, g_h = (G[..., 0], G[..., 1]) if side == 1 else (G[..., 2], G[..., 3])
        neumann = F3_0 - 1j * k * c * g_u + 1j * k * b * g_h
        # Neumann condition: dQ/dY3(0) = neumann with Q = P + beta exp(-|k| s)
        beta0 = side * (_slow_trace(dP_tr[..., 0], src.y3) - neumann) / kk
        kap = beta0 - _slow_trace(alpha[..., 0], src.y3)
        kappa[side] = kap
        coef = _extend_in_y3(kap, src.y3)[..., None] + alpha
        Q = P + ExpPoly.monomial(side, coef, 0, kk)
        det = c * c - b * b
        comps = {}
        for j in range(2):
            Xj = star.apply(_row({j: 1.0, 6: -u0[j], 7: h0[j]}))
            Yj = star.apply(_row({3 + j: 1.0, 6: -h0[j], 7: u0[j]}))
            xi_j = config.xi[j]
            comps[j] = (Xj.scale(c) + Yj.scale(b)).scale(1.0 / (1j * k * det)) \
                - Q.scale(c * xi_j / det)
            comps[3 + j] = (Xj.scale(b) + Yj.scale(c)).scale(1.0 / (1j * k * det)) \
                - Q.scale(b * xi_j / det)
        div_u = star.component(6) - (comps[0].scale(xi1) + comps[1].scale(xi2)).scale(1j * k)
        div_h = star.component(7) - (comps[3].scale(xi1) + comps[4].scale(xi2)).scale(1j * k)
        comps[2] = div_u.decaying_antiderivative()
        comps[5] = div_h.decaying_antiderivative()
        comps[6] = Q
        sol = ExpPoly.stack([comps[i] for i in range(7)])
        if side in residual:
            sol = sol + residual[side]
        U[side] = sol
    return ModeSolution(U, kappa, sources)


def _row(entries: dict) -> np.ndarray:
    r = np.zeros((1, 8), complex)
    for i, v in entries.items():
        r[0, i] = v
    return r


def solve_fast_problem(src: FastSource, config: FrequencyConfig, cutoff=None,
                       tol: float = COMPOSED_TOL, modes=None) -> FastSolution:
    """Compose the zero-mode and per-mode particular solutions (front term zero)."""
    report = solvability_check(src, config, tol=tol, modes=modes)
    if not report.ok:
        raise SolvabilityFailed(f"conditions {report.failing()} fail: {report.deviations}")
    U = {side: {} for side in SIDES}
    for side, prof in solve_zero_mode(src, config, cutoff=cutoff, tol=tol).items():
        U[side][0] = prof
    ks = src.modes() if modes is None else list(modes)
    for k in ks:
        if k == 0:
            continue
        sol = solve_oscillating_mode(src, k, config, check=False)
        for side, prof in sol.U.items():
            U[side][k] = prof
    return FastSolution(U, {}, src.y3)


# ------------------------------------------------------------ kernel projection

def kernel_defect(diff: FastSolution, config: FrequencyConfig) -> float:
    """Distance of a homogeneous candidate from the kernel of the fast problem.

    Nonzero modes must be gamma exp(-|k| s) R(k) with gamma+(0) = -gamma-(0);
    the zero mode must be a residual slow mean with u3 = H3 = 0 and [q] = 0 at
    y3 = 0 plus tangential fast means.
    """
    worst = 0.0
    for k in diff.modes():
        if k == 0:
            tr = {}
            for side in SIDES:
                prof = diff.U.get(side, {}).get(0)
                if prof is None:
                    continue
                star = prof.star()
                worst = max(worst, star.component([2, 5, 6]).max_abs())
                tr[side] = _double_trace(prof.residual(), diff.y3)
                worst = max(worst, float(np.max(np.abs(tr[side][..., [2, 5]]), initial=0.0)))
            if 1 in tr and -1 in tr:
                worst = max(worst, float(np.max(np.abs(tr[1][..., 6] - tr[-1][..., 6]),
                                                initial=0.0)))
            continue
        gam = {}
        for side in SIDES:
            prof = diff.U.get(side, {}).get(k)
            if prof is None:
                gam[side] = 0.0
                continue
            R = eigenvector_r(config, side, k)
            rest = ExpPoly(side, prof.batch, 7,
                           {key: c for key, c in prof.terms.items() if key != (0, float(abs(k)))})
            worst = max(worst, rest.max_abs())
            coeff = prof.terms.get((0, float(abs(k))), np.zeros(prof.batch + (7,), complex))
            g = hermitian(R, coeff) / hermitian(R, R)
            worst = max(worst, float(np.max(np.abs(coeff - g[..., None] * R), initial=0.0)))
            gam[side] = _slow_trace(g, diff.y3)
        worst = max(worst, float(np.max(np.abs(np.asarray(gam[1]) + np.asarray(gam[-1])),
                                        initial=0.0)))
    return worst


def random_fast_solution(config: FrequencyConfig, rng, modes=(1, 2, 3), batch=(3,),
                         y3=None, rates=(1, 2, 3), max_power: int = 2,
                         with_front: bool = True) -> FastSolution:
    """Random real solution in the closed-form class (synthetic data for round trips).

    Each side gets, for k in +-modes, random polynomial-exponential terms and a
    residual part; the zero mode gets decaying fast means and a residual part.
    """
    rng = np.random.default_rng(rng)
    full_batch = ((len(y3),) if y3 is not None else ()) + tuple(batch)
    U = {side: {} for side in SIDES}

    def rand(shape):
        return rng.normal(size=shape) + 1j * rng.normal(size=shape)

    for side in SIDES:
        for k in modes:
            prof = ExpPoly.zeros(side, full_batch, 7)
            prof.add_term(0, 0.0, rand(full_batch + (7,)))
            for a in rates:
                for n in range(rng.integers(0, max_power + 1) + 1):
                    prof.add_term(n, a, rand(full_batch + (7,)))
            U[side][k] = prof
            U[side][-k] = prof.map_coeffs(np.conj)
        zero = ExpPoly.zeros(side, full_batch, 7)
        zero.add_term(0, 0.0, rng.normal(size=full_batch + (7,)))
        for a in rates:
            zero.add_term(1, a, rng.normal(size=full_batch + (7,)))
            zero.add_term(0, a, rng.normal(size=full_batch + (7,)))
        U[side][0] = zero
    psi = {}
    if with_front:
        trace_batch = tuple(batch)
        for k in modes:
            v = rand(trace_batch)
            psi[k], psi[-k] = v, np.conj(v)
    return FastSolution(U, psi, y3)
