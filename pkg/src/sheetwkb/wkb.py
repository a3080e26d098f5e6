"""WKB hierarchy: leading profile, first corrector, slow-mean solvers and residuals.

A profile on side s is stored in closed form as a finite sum

    sum_{(key, k)} g_key(y3) exp(i k theta) P_{key,k}(y', Y3),

where g_key is a monomial chi^e0 chi'^e1 chi''^e2 chi'''^e3 in the cut-off and
its derivatives, and P_{key,k} is an ExpPoly (polynomial-exponential in Y3)
whose coefficients are sampled on a uniform grid of y' in T^2.  Products,
derivatives in (y', y3, Y3, theta) and traces are exact in this class, and the
fast solver applies to each (key, k) block separately.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.linalg import expm
from scipy.stats import qmc

from .amplitude import (Trajectory, TorusSpectrum, _nonlinear_rhs, hj_linearized_solve,
                        time_derivatives)
from .combinatorics import CutoffFunction
from .errors import (FredholmViolated, FrontEscapesStrip, GridMismatch, JumpIncompatible,
                     NotMeanFree, NotSharp, OrderUnsupported, SolvabilityFailed)
from .fast_solver import (COMPOSED_TOL, ExpPoly, FastSolution, FastSource, apply_operator,
                          orthogonality_defect, solvability_check, solve_oscillating_mode)
from .mhd_algebra import (A0, SIDES, FrequencyConfig, eigenvector_r, flux_jacobian,
                          hessian_apply, jacobian)

KEY_LEN = 4
ONE = (0, 0, 0, 0)
CHI = (1, 0, 0, 0)
PI_MASK = np.array([1, 1, 0, 1, 1, 0, 0], dtype=float)


# ------------------------------------------------------------ y3 monomials

def key_mul(a: tuple, b: tuple) -> tuple:
    return tuple(x + y for x, y in zip(a, b))


def key_derivative(key: tuple) -> list:
    """d/dy3 of a cut-off monomial as a list of (coefficient, key)."""
    out = []
    for i, e in enumerate(key):
        if e == 0:
            continue
        if i + 1 >= KEY_LEN:
            raise OrderUnsupported("cut-off derivative order exceeds the profile class")
        new = list(key)
        new[i] -= 1
        new[i + 1] += 1
        out.append((float(e), tuple(new)))
    return out


def key_eval(key: tuple, y3, cutoff: CutoffFunction) -> np.ndarray:
    y3 = np.asarray(y3, dtype=float)
    val = np.ones_like(y3)
    for order, e in enumerate(key):
        if e:
            val = val * cutoff.derivative(y3, order) ** e
    return val


# ------------------------------------------------------------ y' grid

class SlowGrid:
    """Uniform grid of T^2 resolving the frequencies |j|_inf <= jmax exactly."""

    def __init__(self, jmax: int):
        self.jmax = int(jmax)
        self.n = 2 * self.jmax + 1
        self.points = 2 * np.pi * np.arange(self.n) / self.n
        self.js = np.arange(-self.jmax, self.jmax + 1)
        self.E = np.exp(1j * np.outer(self.points, self.js))
        self.Einv = np.conj(self.E).T / self.n
        self.D = self.E @ np.diag(1j * self.js) @ self.Einv

    def _basis(self, J: int) -> np.ndarray:
        if J > self.jmax:
            raise GridMismatch(f"y' grid resolves |j| <= {self.jmax}, got J = {J}")
        return np.exp(1j * np.outer(self.points, np.arange(-J, J + 1)))

    def from_spectrum(self, coeffs: np.ndarray) -> np.ndarray:
        """Grid values of sum_j c[j1, j2] exp(i j.y') (leading two axes)."""
        J = (coeffs.shape[0] - 1) // 2
        B = self._basis(J)
        return np.einsum("ma,nb,ab...->mn...", B, B, coeffs)

    def to_spectrum(self, values: np.ndarray, J: int) -> np.ndarray:
        """Fourier coefficients |j|_inf <= J of grid values (leading two axes)."""
        c = np.einsum("am,bn,mn...->ab...", self.Einv, self.Einv, values)
        lo = self.jmax - J
        if lo < 0:
            pad = [(-lo, -lo), (-lo, -lo)] + [(0, 0)] * (c.ndim - 2)
            return np.pad(c, pad)
        return c[lo:lo + 2 * J + 1, lo:lo + 2 * J + 1]

    def diff(self, values: np.ndarray, axis: int) -> np.ndarray:
        return np.moveaxis(np.tensordot(self.D, values, axes=([1], [axis])), 0, axis)

    def interp(self, y) -> np.ndarray:
        """Matrix mapping grid values to values at the points y (trigonometric interpolation)."""
        y = np.asarray(y, dtype=float).ravel()
        return np.exp(1j * np.outer(y, self.js)) @ self.Einv


# ------------------------------------------------------------ profiles

def _expoly_bilinear(p1: ExpPoly, p2: ExpPoly, fn, ncomp: int) -> ExpPoly:
    batch = np.broadcast_shapes(p1.batch, p2.batch)
    out = ExpPoly(p1.side, batch, ncomp, {})
    for (n1, a1), c1 in p1.terms.items():
        for (n2, a2), c2 in p2.terms.items():
            out.add_term(n1 + n2, a1 + a2, fn(c1, c2))
    return out


@dataclass
class Profile:
    """Closed-form profile on one side: {(key, k): ExpPoly with y'-grid batch}."""
    side: int
    ncomp: int
    grid: SlowGrid
    parts: dict = field(default_factory=dict)

    @classmethod
    def zeros(cls, side, ncomp, grid) -> "Profile":
        return cls(int(side), int(ncomp), grid, {})

    def _new(self, ncomp=None) -> "Profile":
        return Profile(self.side, self.ncomp if ncomp is None else ncomp, self.grid, {})

    def add_part(self, key, k, poly: ExpPoly) -> "Profile":
        if not poly.terms:
            return self
        cur = self.parts.get((key, k))
        self.parts[(key, k)] = poly.copy() if cur is None else cur + poly
        return self

    def __add__(self, other: "Profile") -> "Profile":
        out = self._new(max(self.ncomp, other.ncomp))
        for prof in (self, other):
            for (key, k), poly in prof.parts.items():
                out.add_part(key, k, poly)
        return out

    def __neg__(self) -> "Profile":
        return self.scale(-1.0)

    def __sub__(self, other: "Profile") -> "Profile":
        return self + (-other)

    def _map(self, fn, ncomp=None) -> "Profile":
        out = self._new(ncomp)
        for (key, k), poly in self.parts.items():
            out.add_part(key, k, fn(poly))
        return out

    def scale(self, factor) -> "Profile":
        return self._map(lambda p: p.scale(factor))

    def apply(self, matrix) -> "Profile":
        matrix = np.asarray(matrix)
        return self._map(lambda p: p.apply(matrix), matrix.shape[0])

    def component(self, idx) -> "Profile":
        n = 1 if np.isscalar(idx) else len(idx)
        return self._map(lambda p: p.component(idx), n)

    @staticmethod
    def stack(parts: list) -> "Profile":
        first = parts[0]
        out = first._new(sum(p.ncomp for p in parts))
        keys = set().union(*(p.parts for p in parts))
        for key in keys:
            blocks = [p.parts.get(key, ExpPoly.zeros(first.side, (first.grid.n,) * 2, p.ncomp))
                      for p in parts]
            out.add_part(key[0], key[1], ExpPoly.stack(blocks))
        return out

    # --- derivatives
    def d_theta(self) -> "Profile":
        out = self._new()
        for (key, k), poly in self.parts.items():
            if k:
                out.add_part(key, k, poly.scale(1j * k))
        return out

    def d_Y(self) -> "Profile":
        return self._map(lambda p: p.d_dY())

    def d_y(self, j: int) -> "Profile":
        """Derivative in y_j (j = 1, 2) on the y' grid."""
        return self._map(lambda p: p.map_coeffs(lambda c: self.grid.diff(c, j - 1)))

    def d_y3(self) -> "Profile":
        out = self._new()
        for (key, k), poly in self.parts.items():
            for coef, new in key_derivative(key):
                out.add_part(new, k, poly.scale(coef))
        return out

    def mul_key(self, key2: tuple) -> "Profile":
        out = self._new()
        for (key, k), poly in self.parts.items():
            out.add_part(key_mul(key, key2), k, poly)
        return out

    # --- products
    def bilinear(self, other: "Profile", fn, ncomp: int, kmax=None) -> "Profile":
        out = self._new(ncomp)
        for (key1, k1), p1 in self.parts.items():
            for (key2, k2), p2 in other.parts.items():
                k = k1 + k2
                if kmax is not None and abs(k) > kmax:
                    continue
                out.add_part(key_mul(key1, key2), k, _expoly_bilinear(p1, p2, fn, ncomp))
        return out

    def times(self, other: "Profile", kmax=None) -> "Profile":
        return self.bilinear(other, lambda a, b: a * b, max(self.ncomp, other.ncomp), kmax)

    def hessian(self, alpha: int, other: "Profile", kmax=None) -> "Profile":
        return self.bilinear(other, lambda a, b: hessian_apply(alpha, a, b), 7, kmax)

    # --- selection and traces
    def modes(self) -> list:
        return sorted({k for (_, k) in self.parts})

    def keys(self, k=None) -> list:
        return sorted({key for (key, kk) in self.parts if k is None or kk == k})

    def restrict(self, kmax: int) -> "Profile":
        out = self._new()
        for (key, k), poly in self.parts.items():
            if abs(k) <= kmax:
                out.add_part(key, k, poly)
        return out

    def at_y3(self, y3: float, cutoff: CutoffFunction) -> dict:
        """{k: ExpPoly} at a fixed slow normal coordinate."""
        out = {}
        for (key, k), poly in self.parts.items():
            g = float(key_eval(key, y3, cutoff))
            if g == 0.0:
                continue
            out[k] = poly.scale(g) if k not in out else out[k] + poly.scale(g)
        return out

    def sample_y3(self, y3, cutoff: CutoffFunction) -> dict:
        """{k: ExpPoly} with a leading batch axis sampling y3."""
        y3 = np.asarray(y3, dtype=float)
        out = {}
        for (key, k), poly in self.parts.items():
            g = key_eval(key, y3, cutoff).reshape((-1,) + (1,) * (len(poly.batch) + 1))
            term = poly.map_coeffs(lambda c: g * c[None])
            out[k] = term if k not in out else out[k] + term
        return out

    def double_trace(self, cutoff: CutoffFunction) -> dict:
        """{k: array (N, N, ncomp)} at y3 = Y3 = 0."""
        return {k: poly.trace() for k, poly in self.at_y3(0.0, cutoff).items()}

    def max_abs(self) -> float:
        return max((p.max_abs() for p in self.parts.values()), default=0.0)

    def evaluate(self, y1, y2, y3, Y3, theta, cutoff: CutoffFunction) -> np.ndarray:
        """Values at points (flattened), shape (P, ncomp)."""
        y1, y2, y3, Y3, theta = (np.asarray(v, dtype=float).ravel()
                                 for v in np.broadcast_arrays(y1, y2, y3, Y3, theta))
        P = y1.size
        s = np.maximum(self.side * Y3, 0.0)
        I1, I2 = self.grid.interp(y1), self.grid.interp(y2)
        out = np.zeros((P, self.ncomp), complex)
        gcache = {}
        for (key, k), poly in self.parts.items():
            if key not in gcache:
                gcache[key] = key_eval(key, y3, cutoff)
            g = gcache[key]
            if not np.any(g):
                continue
            g = g * np.exp(1j * k * theta)
            for (n, a), c in poly.terms.items():
                spatial = np.einsum("pa,pb,abc->pc", I1, I2, c)
                out += (g * s ** n * np.exp(-a * s))[:, None] * spatial
        return out


def _is_profile_dict(obj) -> bool:
    return isinstance(obj, dict) and all(isinstance(v, Profile) for v in obj.values())


@dataclass
class ModalProfile:
    """Profiles on both sides at one time sample (plus optional time derivative)."""
    U: dict                      # side -> Profile (7 components)
    dU: dict | None = None       # side -> Profile, time derivative
    time: float | None = None
    info: dict = field(default_factory=dict)

    def max_abs(self) -> float:
        return max(p.max_abs() for p in self.U.values())


# ------------------------------------------------------------ front data

@dataclass
class FrontJet:
    """Front profiles and their time derivatives at one time sample."""
    psi2: TorusSpectrum
    dpsi2: TorusSpectrum
    ddpsi2: TorusSpectrum | None = None
    psi3: TorusSpectrum | None = None
    dpsi3: TorusSpectrum | None = None
    time: float | None = None


def fd_time_derivative(traj: Trajectory, n: int, order: int = 1) -> TorusSpectrum:
    """Fourth-order central difference of stored spectra (first or second derivative)."""
    if n < 2 or n > len(traj.times) - 3:
        raise GridMismatch("central differences need two samples on each side")
    c = traj.coeffs
    if order == 1:
        d = (-c[n + 2] + 8 * c[n + 1] - 8 * c[n - 1] + c[n - 2]) / (12 * traj.dt)
    elif order == 2:
        d = (-c[n + 2] + 16 * c[n + 1] - 30 * c[n] + 16 * c[n - 1] - c[n - 2]) / (12 * traj.dt ** 2)
    else:
        raise ValueError("order must be 1 or 2")
    return TorusSpectrum(d, traj.J, traj.K)


def jet_from_trajectory(traj: Trajectory, n: int, config: FrequencyConfig,
                        time_derivative: str = "exact") -> FrontJet:
    """Front jet at sample n; 'exact' uses the Galerkin flow, 'fd' central differences."""
    psi = traj.state(n)
    if time_derivative == "exact":
        _, d1, d2 = time_derivatives(psi, config, order=2)
    elif time_derivative == "fd":
        d1, d2 = fd_time_derivative(traj, n, 1), fd_time_derivative(traj, n, 2)
    else:
        raise ValueError("time_derivative must be 'exact' or 'fd'")
    return FrontJet(psi, d1, d2, time=float(traj.times[n]))


def _spec_derivative(spec: TorusSpectrum, y=None, theta: bool = False) -> np.ndarray:
    c = spec.coeffs.copy()
    js = np.arange(-spec.J, spec.J + 1)
    if y == 1:
        c = c * (1j * js)[:, None, None]
    elif y == 2:
        c = c * (1j * js)[None, :, None]
    if theta:
        c = c * (1j * np.arange(-spec.K, spec.K + 1))[None, None, :]
    return c


def front_modes(spec: TorusSpectrum, grid: SlowGrid, y=None, theta: bool = False) -> dict:
    """{k: grid values (N, N)} of psi or of one of its first derivatives."""
    c = _spec_derivative(spec, y, theta)
    out = {}
    for i, k in enumerate(range(-spec.K, spec.K + 1)):
        if np.any(c[:, :, i]):
            out[k] = grid.from_spectrum(c[:, :, i])
    return out


def front_field(spec: TorusSpectrum, side: int, grid: SlowGrid, y=None,
                theta: bool = False) -> Profile:
    """Y3- and y3-independent scalar profile of the front (or a first derivative)."""
    out = Profile.zeros(side, 1, grid)
    for k, vals in front_modes(spec, grid, y, theta).items():
        out.add_part(ONE, k, ExpPoly.monomial(side, vals[..., None], 0, 0.0))
    return out


def _conv(a: dict, b: dict, kmax=None) -> dict:
    out = {}
    for k1, v1 in a.items():
        for k2, v2 in b.items():
            k = k1 + k2
            if kmax is not None and abs(k) > kmax:
                continue
            out[k] = v1 * v2 if k not in out else out[k] + v1 * v2
    return out


# ------------------------------------------------------------ leading profile

def leading_profile_side(psi: TorusSpectrum, config: FrequencyConfig, side: int,
                         grid: SlowGrid) -> Profile:
    if not psi.is_sharp():
        raise NotSharp("the leading front must have zero fast mean")
    out = Profile.zeros(side, 7, grid)
    for k, vals in front_modes(psi, grid).items():
        if k == 0:
            continue
        coeff = side * abs(k) * vals[..., None] * eigenvector_r(config, side, k)
        out.add_part(CHI, k, ExpPoly.monomial(side, coeff, 0, abs(k)))
    return out


def _grid_for(spec, grid):
    return SlowGrid(3 * spec.J) if grid is None else grid


def leading_profile(psi2, config: FrequencyConfig, grid: SlowGrid | None = None,
                    index: int | None = None) -> ModalProfile:
    """U1 = side sum_k |k| psi2(k) chi(y3) exp(-|k| |Y3| + i k theta) R(k) on both sides.

    psi2 is a TorusSpectrum snapshot or a Trajectory together with `index`.
    """
    t = None
    if isinstance(psi2, Trajectory):
        if index is None:
            raise ValueError("a trajectory needs a time index")
        t = float(psi2.times[index])
        psi2 = psi2.state(index)
    grid = _grid_for(psi2, grid)
    return ModalProfile({s: leading_profile_side(psi2, config, s, grid) for s in SIDES}, time=t)


# ------------------------------------------------------------ hierarchy at one time

def _xi7(config) -> np.ndarray:
    return np.array([config.xi[0], config.xi[1]])


class ProfileHierarchy:
    """Profiles, sources and corrector at one time sample.

    kmax bounds the theta modes of the corrector (default: the front
    truncation K, the range in which the amplitude equation is exact).
    """

    def __init__(self, jet: FrontJet, config: FrequencyConfig, cutoff: CutoffFunction | None = None,
                 grid: SlowGrid | None = None, kmax: int | None = None):
        self.jet = jet
        self.config = config
        self.cutoff = CutoffFunction.bump() if cutoff is None else cutoff
        self.grid = _grid_for(jet.psi2, grid)
        self.K = jet.psi2.K
        self.kmax = self.K if kmax is None else kmax
        self._cache = {}

    # --- cached helpers
    def _get(self, name, fn):
        if name not in self._cache:
            self._cache[name] = fn()
        return self._cache[name]

    def front(self, which: str, side: int, y=None, theta=False) -> Profile:
        spec = getattr(self.jet, which)
        return self._get(("front", which, side, y, theta),
                         lambda: front_field(spec, side, self.grid, y, theta))

    @property
    def U1(self) -> dict:
        return self._get("U1", lambda: {s: leading_profile_side(self.jet.psi2, self.config, s, self.grid)
                                        for s in SIDES})

    @property
    def dU1(self) -> dict:
        return self._get("dU1", lambda: {s: leading_profile_side(self.jet.dpsi2, self.config, s,
                                                                  self.grid) for s in SIDES})

    # --- order-one sources
    def F1(self) -> dict:
        return self._get("F1", self._assemble_F1)

    def _assemble_F1(self) -> dict:
        cfg = self.config
        out = {}
        for s in SIDES:
            U, dU = self.U1[s], self.dU1[s]
            A1, A2, A3 = (jacobian(s, w, cfg) for w in ("A1", "A2", "A3"))
            Acal = jacobian(s, "Acal", cfg)
            dth = self.front("psi2", s, theta=True)
            main = -(dU.apply(A0) + U.d_y(1).apply(A1) + U.d_y(2).apply(A2) + U.d_y3().apply(A3))
            main = main + dth.times(U.d_Y().apply(Acal))
            dU_th, dU_Y = U.d_theta(), U.d_Y()
            for j in (1, 2):
                if cfg.xi[j - 1]:
                    main = main - U.hessian(j, dU_th).scale(cfg.xi[j - 1])
            main = main - U.hessian(3, dU_Y)
            H = U.component([3, 4, 5])
            xiH = H.apply(np.array([[cfg.xi[0], cfg.xi[1], 0.0]]))
            div = -(H.component(0).d_y(1) + H.component(1).d_y(2) + H.component(2).d_y3())
            div = div + dth.times(xiH.d_Y())
            out[s] = Profile.stack([main, div])
        return out

    def G1(self) -> dict:
        return self._get("G1", self._assemble_G1)

    def _boundary_common(self, psi_next: TorusSpectrum | None, dpsi_next, traces: dict,
                         slow_terms: dict) -> dict:
        """Assemble G = (G1+, G2+, G1-, G2-, 0) from per-side products."""
        G = {}
        for s in SIDES:
            g_u, g_h = slow_terms[s]
            for k, v in g_u.items():
                G.setdefault(k, np.zeros(v.shape + (5,), complex))
                G[k][..., 0 if s == 1 else 2] += v
            for k, v in g_h.items():
                G.setdefault(k, np.zeros(v.shape + (5,), complex))
                G[k][..., 1 if s == 1 else 3] += v
        return G

    def _assemble_G1(self) -> dict:
        cfg, grid = self.config, self.grid
        psi, dpsi = self.jet.psi2, self.jet.dpsi2
        dth = front_modes(psi, grid, theta=True)
        dy = {j: front_modes(psi, grid, y=j) for j in (1, 2)}
        dt = front_modes(dpsi, grid)
        terms = {}
        for s in SIDES:
            u0, h0 = cfg.sheet.velocity(s), cfg.sheet.field(s)
            tr = self.U1[s].double_trace(self.cutoff)
            xi_u = {k: cfg.xi[0] * v[..., 0] + cfg.xi[1] * v[..., 1] for k, v in tr.items()}
            xi_h = {k: cfg.xi[0] * v[..., 3] + cfg.xi[1] * v[..., 4] for k, v in tr.items()}
            g_u = _conv(dth, xi_u)
            g_h = _conv(dth, xi_h)
            for k, v in dt.items():
                g_u[k] = g_u.get(k, 0) + v
            for j in (1, 2):
                for k, v in dy[j].items():
                    g_u[k] = g_u.get(k, 0) + u0[j - 1] * v
                    g_h[k] = g_h.get(k, 0) + h0[j - 1] * v
            terms[s] = (g_u, g_h)
        return self._boundary_common(None, None, None, terms)

    def source(self, m: int, y3=None) -> FastSource:
        """Interior and boundary sources of order m as a FastSource (y3 samples or y3 = 0)."""
        if m == 0:
            return FastSource({s: {} for s in SIDES}, {}, None if y3 is None else np.asarray(y3))
        if m == 1:
            F, G = self.F1(), self.G1()
        elif m == 2:
            F, G = self.F2(), self.G2()
        else:
            raise OrderUnsupported("sources are assembled for m <= 2")
        if y3 is None:
            Fs = {s: F[s].at_y3(0.0, self.cutoff) for s in SIDES}
            return FastSource(Fs, G, None)
        y3 = np.asarray(y3, dtype=float)
        Fs = {s: F[s].sample_y3(y3, self.cutoff) for s in SIDES}
        return FastSource(Fs, G, y3)

    # --- first corrector
    def U2_particular(self) -> dict:
        """Corrector with zero front term psi3 (oscillating modes |k| <= kmax)."""
        return self._get("U2p", self._solve_corrector)

    def _solve_corrector(self) -> dict:
        cfg, cut = self.config, self.cutoff
        F, G = self.F1(), self.G1()
        N = self.grid.n
        U = {s: Profile.zeros(s, 7, self.grid) for s in SIDES}
        modes = sorted(set(F[1].modes()) | set(F[-1].modes()) | set(G))
        diag = {"slow_mean": 0.0, "dropped_modes": 0.0, "y_truncation": 0.0}
        for k in modes:
            if k == 0 or abs(k) > self.kmax:
                if k != 0:
                    for s in SIDES:
                        for (key, kk), poly in F[s].parts.items():
                            if kk == k:
                                diag["dropped_modes"] = max(diag["dropped_modes"], poly.max_abs())
                continue
            image = np.zeros((N, N, 5), complex)
            keys = set(F[1].keys(k)) | set(F[-1].keys(k))
            for key in sorted(keys):
                blocks = {s: {k: F[s].parts[(key, k)]} for s in SIDES if (key, k) in F[s].parts}
                sol = solve_oscillating_mode(FastSource(blocks, {}, None), k, cfg, check=False)
                g0 = float(key_eval(key, 0.0, cut))
                for s in SIDES:
                    U[s].add_part(key, k, sol.U[s])
                if g0:
                    img = apply_operator(FastSolution({s: {k: sol.U[s]} for s in SIDES}), cfg)
                    image = image + g0 * img.G[k]
            D = G.get(k, np.zeros((N, N, 5), complex)) - image
            e_left = orthogonality_defect(FastSource({}, {k: D}, None), k, cfg)
            diag["y_truncation"] = max(diag["y_truncation"], float(np.max(np.abs(e_left))))
            corr = solve_oscillating_mode(FastSource({s: {} for s in SIDES}, {k: D}, None), k, cfg,
                                          check=False)
            for s in SIDES:
                U[s].add_part(CHI, k, corr.U[s])
        # zero mode: fast means of u3, H3, q by decaying antiderivatives
        traces = {s: np.zeros((N, N, 7), complex) for s in SIDES}
        for s in SIDES:
            for key in F[s].keys(0):
                prof = F[s].parts[(key, 0)]
                if prof.max_abs() == 0.0:
                    continue
                res = float(np.max(np.abs(prof.residual_value()), initial=0.0))
                if res > COMPOSED_TOL:
                    raise SolvabilityFailed(f"condition (b) fails on side {s:+d}: {res:.3e}")
                star = prof.star()
                block = ExpPoly.zeros(s, prof.batch, 7)
                for col, src in ((2, 6), (5, 7), (6, 2)):
                    e = np.zeros((7, 1))
                    e[col, 0] = 1.0
                    block = block + star.component(src).decaying_antiderivative().apply(e)
                U[s].add_part(key, 0, block)
                traces[s] = traces[s] + float(key_eval(key, 0.0, cut)) * block.trace()
        G0 = G.get(0, np.zeros((N, N, 5), complex))
        lift = {}
        for s in SIDES:
            vec = np.zeros((N, N, 7), complex)
            iu, ih = (0, 1) if s == 1 else (2, 3)
            vec[..., 2] = G0[..., iu] - traces[s][..., 2]
            vec[..., 5] = G0[..., ih] - traces[s][..., 5]
            lift[s] = vec
        jump = G0[..., 4] - traces[1][..., 6] + traces[-1][..., 6]
        lift[1][..., 6] = 0.5 * jump
        lift[-1][..., 6] = -0.5 * jump
        for s in SIDES:
            diag["slow_mean"] = max(diag["slow_mean"], float(np.max(np.abs(lift[s]))))
            U[s].add_part(CHI, 0, ExpPoly.monomial(s, lift[s]))
        self._cache["U2_diag"] = diag
        return U

    def front_lift(self, psi: TorusSpectrum | None) -> dict:
        """Homogeneous surface-wave part side sum |k| psi(k) chi exp(-|k||Y3|) R(k)."""
        if psi is None:
            return {s: Profile.zeros(s, 7, self.grid) for s in SIDES}
        return {s: leading_profile_side(psi, self.config, s, self.grid) for s in SIDES}

    @property
    def U2(self) -> dict:
        def build():
            W = self.front_lift(self.jet.psi3)
            return {s: self.U2_particular()[s] + W[s] for s in SIDES}
        return self._get("U2", build)

    @property
    def dU2(self) -> dict:
        """Exact time derivative of the corrector (polarization of the quadratic map)."""
        def build():
            jet = self.jet
            if jet.ddpsi2 is None:
                raise ValueError("the second time derivative of psi2 is required")
            plus = ProfileHierarchy(FrontJet(jet.psi2 + jet.dpsi2, jet.ddpsi2), self.config,
                                    self.cutoff, self.grid, self.kmax).U2_particular()
            minus = ProfileHierarchy(FrontJet(jet.psi2 - jet.dpsi2, jet.ddpsi2 * -1.0), self.config,
                                     self.cutoff, self.grid, self.kmax).U2_particular()
            W = self.front_lift(jet.dpsi3)
            return {s: (plus[s] - minus[s]).scale(0.5) + W[s] for s in SIDES}
        return self._get("dU2", build)

    def corrector_diagnostics(self) -> dict:
        self.U2_particular()
        return dict(self._cache["U2_diag"])

    # --- order-two sources (for the front corrector equation)
    def F2(self) -> dict:
        return self._get("F2", self._assemble_F2)

    def _assemble_F2(self) -> dict:
        cfg, km = self.config, self.kmax
        out = {}
        for s in SIDES:
            U1, U2, dU2 = self.U1[s], self.U2[s], self.dU2[s]
            A1, A2, A3 = (jacobian(s, w, cfg) for w in ("A1", "A2", "A3"))
            Acal = jacobian(s, "Acal", cfg)
            d2th = self.front("psi2", s, theta=True)
            d3th = (front_field(self.jet.psi3, s, self.grid, theta=True)
                    if self.jet.psi3 is not None else Profile.zeros(s, 1, self.grid))
            d2t = front_field(self.jet.dpsi2, s, self.grid)
            d2y = {j: self.front("psi2", s, y=j) for j in (1, 2)}
            U1_Y, U1_th, U1_y3 = U1.d_Y(), U1.d_theta(), U1.d_y3()
            U2_Y, U2_th = U2.d_Y(), U2.d_theta()
            main = -(dU2.apply(A0) + U2.d_y(1).apply(A1) + U2.d_y(2).apply(A2)
                     + U2.d_y3().apply(A3))
            main = main + d2th.times(U2_Y.apply(Acal), km) + d3th.times(U1_Y.apply(Acal), km)
            main = main + d2t.times(U1_Y.apply(A0), km)
            main = main + d2y[1].times(U1_Y.apply(A1), km) + d2y[2].times(U1_Y.apply(A2), km)
            main = main + d2th.times(U1_y3.apply(Acal), km).mul_key(CHI)
            main = main - U1.hessian(1, U1.d_y(1), km) - U1.hessian(2, U1.d_y(2), km) \
                - U1.hessian(3, U1_y3, km)
            xi_hess = None
            for j in (1, 2):
                xj = cfg.xi[j - 1]
                if not xj:
                    continue
                term = (U1.hessian(j, U2_th, km) + U2.hessian(j, U1_th, km)).scale(xj)
                main = main - term
                xi_hess = U1.hessian(j, U1_Y, km).scale(xj) if xi_hess is None else \
                    xi_hess + U1.hessian(j, U1_Y, km).scale(xj)
            main = main - U1.hessian(3, U2_Y, km) - U2.hessian(3, U1_Y, km)
            if xi_hess is not None:
                main = main + d2th.times(xi_hess, km)
            xi_row = np.array([[cfg.xi[0], cfg.xi[1], 0.0]])
            H1, H2 = U1.component([3, 4, 5]), U2.component([3, 4, 5])
            div = -(H2.component(0).d_y(1) + H2.component(1).d_y(2) + H2.component(2).d_y3())
            div = div + d2th.times(H2.apply(xi_row).d_Y(), km) + d3th.times(H1.apply(xi_row).d_Y(), km)
            div = div + d2y[1].times(H1.component(0).d_Y(), km) + d2y[2].times(H1.component(1).d_Y(), km)
            div = div + d2th.times(H1.apply(xi_row).d_y3(), km).mul_key(CHI)
            out[s] = Profile.stack([main.restrict(km), div.restrict(km)])
        return out

    def G2(self) -> dict:
        return self._get("G2", self._assemble_G2)

    def _assemble_G2(self) -> dict:
        cfg, grid, km = self.config, self.grid, self.kmax
        jet = self.jet
        dth2 = front_modes(jet.psi2, grid, theta=True)
        dy2 = {j: front_modes(jet.psi2, grid, y=j) for j in (1, 2)}
        zero = TorusSpectrum.zeros(jet.psi2.J, jet.psi2.K)
        psi3 = jet.psi3 if jet.psi3 is not None else zero
        dpsi3 = jet.dpsi3 if jet.dpsi3 is not None else zero
        dth3 = front_modes(psi3, grid, theta=True)
        dy3 = {j: front_modes(psi3, grid, y=j) for j in (1, 2)}
        dt3 = front_modes(dpsi3, grid)
        terms = {}
        for s in SIDES:
            u0, h0 = cfg.sheet.velocity(s), cfg.sheet.field(s)
            tr1 = self.U1[s].double_trace(self.cutoff)
            tr2 = self.U2[s].double_trace(self.cutoff)
            g_u, g_h = {}, {}

            def acc(target, contrib):
                for k, v in contrib.items():
                    if abs(k) <= km:
                        target[k] = target.get(k, 0) + v

            for tr, dth in ((tr2, dth2), (tr1, dth3)):
                acc(g_u, _conv(dth, {k: cfg.xi[0] * v[..., 0] + cfg.xi[1] * v[..., 1]
                                     for k, v in tr.items()}))
                acc(g_h, _conv(dth, {k: cfg.xi[0] * v[..., 3] + cfg.xi[1] * v[..., 4]
                                     for k, v in tr.items()}))
            for j in (1, 2):
                acc(g_u, _conv(dy2[j], {k: v[..., j - 1] for k, v in tr1.items()}))
                acc(g_h, _conv(dy2[j], {k: v[..., 2 + j] for k, v in tr1.items()}))
                acc(g_u, {k: u0[j - 1] * v for k, v in dy3[j].items()})
                acc(g_h, {k: h0[j - 1] * v for k, v in dy3[j].items()})
            acc(g_u, dt3)
            terms[s] = (g_u, g_h)
        return self._boundary_common(None, None, None, terms)

    # --- front corrector equation
    def orthogonality_residual(self, m: int) -> dict:
        """{k: (N, N) array} of the orthogonality condition on the order-m sources, 0 < |k| <= kmax."""
        src = self.source(m)
        shape = (self.grid.n, self.grid.n)
        return {k: np.broadcast_to(orthogonality_defect(src, k, self.config), shape)
                for k in range(-self.kmax, self.kmax + 1) if k}

    def psi3_source(self) -> TorusSpectrum:
        """Source of the linearized amplitude equation for psi3 (sharp part)."""
        if self.jet.psi3 is not None or self.jet.dpsi3 is not None:
            raise ValueError("the psi3 source is defined with psi3 = 0")
        J, K = self.jet.psi2.J, self.jet.psi2.K
        out = TorusSpectrum.zeros(J, K)
        for k, val in self.orthogonality_residual(2).items():
            if abs(k) > K:
                continue
            out.coeffs[:, :, k + K] = -self.grid.to_spectrum(val, J) / time_weight(self.config, k)
        return out.symmetrize()


def time_weight(config: FrequencyConfig, k: int) -> complex:
    """Coefficient of d/dt psi_hat(k) in the orthogonality condition."""
    F = {}
    for s in SIDES:
        lead = s * abs(k) * eigenvector_r(config, s, k)
        main = -(A0 @ lead)
        F[s] = {k: ExpPoly.monomial(s, np.concatenate([main, [0.0]]), 0, abs(k))}
    G = {k: np.array([1.0, 0.0, 1.0, 0.0, 0.0], complex)}
    return complex(orthogonality_defect(FastSource(F, G, None), k, config))


# ------------------------------------------------------------ public assembly API

def interior_source(m: int, jet: FrontJet, config: FrequencyConfig, cutoff=None, grid=None,
                    y3=None) -> FastSource:
    """Interior sources (F, F8) of order m; boundary data left empty."""
    if m < 0 or m > 2:
        raise OrderUnsupported("interior sources are assembled for m <= 2")
    src = ProfileHierarchy(jet, config, cutoff, grid).source(m, y3)
    return FastSource(src.F, {}, src.y3)


def boundary_source(m: int, jet: FrontJet, config: FrequencyConfig, cutoff=None,
                    grid=None) -> dict:
    """Boundary data G^m = {k: (N, N, 5)}; the fifth component is zero."""
    if m < 0 or m > 2:
        raise OrderUnsupported("boundary sources are assembled for m <= 2")
    if m == 0:
        return {}
    h = ProfileHierarchy(jet, config, cutoff, grid)
    return h.G1() if m == 1 else h.G2()


def first_order_check(jet: FrontJet, config: FrequencyConfig, cutoff=None, grid=None,
                      y3=None, modes=None, tol: float = 1e-7):
    """Solvability report of the assembled order-one sources."""
    h = ProfileHierarchy(jet, config, cutoff, grid)
    y3 = np.linspace(-0.9, 0.9, 19) if y3 is None else np.asarray(y3)
    if modes is None:
        modes = [k for k in range(-h.K // 2, h.K // 2 + 1) if k]
    src = h.source(1, y3)
    report = solvability_check(src, config, tol=tol, modes=[0])
    # the amplitude flow is a Galerkin truncation in y': (e) holds on |j'| <= J
    worst = 0.0
    for k in modes:
        if k:
            e = orthogonality_defect(h.source(1), k, config)
            worst = max(worst, float(np.max(np.abs(h.grid.to_spectrum(e, h.jet.psi2.J)))))
    report.deviations["e"] = worst
    return report


@dataclass
class CorrectorResult:
    psi3: Trajectory
    source: np.ndarray            # psi3 source sampled on the trajectory grid
    config: FrequencyConfig
    cutoff: CutoffFunction
    grid: SlowGrid
    psi2: Trajectory

    def hierarchy(self, n: int) -> ProfileHierarchy:
        jet = jet_from_trajectory(self.psi2, n, self.config)
        psi3 = self.psi3.state(n)
        rhs = _nonlinear_rhs(psi3.coeffs, psi3.J, psi3.K, self.config,
                             partner=self.psi2.state(n), factor=2.0).coeffs + self.source[n]
        rhs[:, :, psi3.K] = 0.0
        jet.psi3, jet.dpsi3 = psi3, TorusSpectrum(rhs, psi3.J, psi3.K)
        return ProfileHierarchy(jet, self.config, self.cutoff, self.grid)

    def profile(self, n: int) -> ModalProfile:
        h = self.hierarchy(n)
        return ModalProfile(h.U2, h.dU2, float(self.psi2.times[n]), h.corrector_diagnostics())


def first_corrector(psi2: Trajectory, config: FrequencyConfig, t_final: float | None = None,
                    cutoff=None, grid=None, stride: int = 1) -> CorrectorResult:
    """Corrector U2 and front corrector psi3 along an amplitude trajectory.

    The psi3 source is evaluated every `stride` samples and interpolated by a
    cubic spline in time; psi3 starts from zero.
    """
    cutoff = CutoffFunction.bump() if cutoff is None else cutoff
    grid = SlowGrid(3 * psi2.J) if grid is None else grid
    n_last = len(psi2.times) - 1 if t_final is None else psi2.index_of(t_final)
    idx = list(range(0, n_last + 1, stride))
    if idx[-1] != n_last:
        idx.append(n_last)
    samples = []
    for n in idx:
        h = ProfileHierarchy(jet_from_trajectory(psi2, n, config), config, cutoff, grid)
        samples.append(h.psi3_source().coeffs)
    samples = np.array(samples)
    times = psi2.times[idx]
    if len(idx) >= 2:
        spline = CubicSpline(times, samples, axis=0)
        full = spline(psi2.times[:n_last + 1])
    else:
        full = samples
    J, K = psi2.J, psi2.K
    psi3 = hj_linearized_solve(psi2, lambda t: TorusSpectrum(spline(t), J, K) if len(idx) >= 2
                               else TorusSpectrum(samples[0], J, K),
                               TorusSpectrum.zeros(J, K), config, psi2.dt,
                               float(psi2.times[n_last]))
    return CorrectorResult(psi3, full, config, cutoff, grid, psi2)


def rectification_report(h: ProfileHierarchy, Y3=None) -> dict:
    """Trace vanishings of the corrector's fast means and the closed-form pressure comparison."""
    Y3 = np.linspace(0.0, 6.0, 25) if Y3 is None else np.asarray(Y3)
    cfg = h.config
    U2 = h.U2_particular()
    psi = h.jet.psi2
    K = psi.K
    out = {"u3_trace": 0.0, "H3_trace": 0.0, "q_double_trace": 0.0, "q_formula": 0.0,
           "slow_mean": h.corrector_diagnostics()["slow_mean"]}
    modes = front_modes(psi, h.grid)
    for s in SIDES:
        zero = U2[s].at_y3(0.0, h.cutoff).get(0)
        if zero is None:
            continue
        star = zero.star()
        vals = star.evaluate(s * Y3)                    # (N, N, nY, 7)
        out["u3_trace"] = max(out["u3_trace"], float(np.max(np.abs(vals[..., 2]))))
        out["H3_trace"] = max(out["H3_trace"], float(np.max(np.abs(vals[..., 5]))))
        out["q_double_trace"] = max(out["q_double_trace"], float(np.max(np.abs(star.trace()[..., 6]))))
        ref = np.zeros(vals.shape[:-1], complex)
        factor = cfg.c[s] ** 2 - cfg.b[s] ** 2
        for k in range(1, K + 1):
            if k not in modes:
                continue
            # sum over +-k of k^2 psi(-k) psi(k)
            amp = 2 * k * k * modes[-k] * modes[k]
            ref = ref + factor * amp[..., None] * (np.exp(-k * Y3) - np.exp(-2 * k * Y3))
        out["q_formula"] = max(out["q_formula"], float(np.max(np.abs(vals[..., 6] - ref))))
    return out


def pressure_normalization_check(order: int, hierarchy: ProfileHierarchy) -> float | dict:
    """Normalization integrals of the slow pressure mean.

    order 1: int q1 slow mean; order 2: int q2 slow mean plus the fast mean of
    q1; order 3: the two integral lines built from the corrector's fast mean
    (diagnostic, returned as a dict).
    """
    grid, cut = hierarchy.grid, hierarchy.cutoff
    area = (2 * np.pi) ** 2

    def slow_mean_integral(U: dict) -> float:
        total = 0.0
        ys = np.linspace(0, 1, 201)
        for s in SIDES:
            for (key, k), poly in U[s].parts.items():
                if k != 0:
                    continue
                res = poly.residual_value()[..., 6]
                g = key_eval(key, s * ys, cut)
                total += np.trapezoid(g, ys) * np.mean(res) * area
        return float(abs(total))

    def fast_mean_integral(U: dict) -> float:
        total = 0.0
        for s in SIDES:
            zero = U[s].at_y3(0.0, cut).get(0)
            if zero is None:
                continue
            total += np.mean(zero.star().laplace_weight(0.0)[..., 6]) * area
        return total

    if order == 1:
        return slow_mean_integral(hierarchy.U1)
    if order == 2:
        return abs(slow_mean_integral(hierarchy.U2_particular()) + fast_mean_integral(hierarchy.U1))
    if order == 3:
        per_side = {}
        for s in SIDES:
            zero = hierarchy.U2_particular()[s].at_y3(0.0, cut).get(0)
            per_side[s] = 0.0 if zero is None else complex(
                np.mean(zero.star().laplace_weight(0.0)[..., 6]) * area)
        return {"fast_mean_q2": per_side, "sum": per_side[1] + per_side[-1]}
    raise OrderUnsupported("normalization integrals are available for m <= 3")


# ------------------------------------------------------------ slow-mean solvers

_GL_X, _GL_W = np.polynomial.legendre.leggauss(48)


def _integrate(fn, a: float, b: float) -> complex:
    if b == a:
        return 0.0
    x = 0.5 * (b - a) * _GL_X + 0.5 * (b + a)
    return 0.5 * (b - a) * np.sum(_GL_W * np.asarray(fn(x)))


@dataclass
class LaplaceSolution:
    """Per-mode pressure q(side, j', y3) = nu e^{|j| y3} + omega e^{-|j| y3} + particular."""
    coeffs: dict      # (side, j') -> (nu, omega) or (A, B) for j' = 0
    sources: dict     # (side, j') -> callable or None
    intervals = {1: (0.0, 1.0), -1: (-1.0, 0.0)}

    def _particular(self, side, jp, y):
        f = self.sources.get((side, jp))
        if f is None:
            return 0.0 * y, 0.0 * y
        a, b = self.intervals[side]
        kap = float(np.hypot(*jp))
        val, der = [], []
        for yy in np.atleast_1d(y):
            if kap > 0:
                left = _integrate(lambda z: np.exp(-kap * (yy - z)) * f(z), a, yy)
                right = _integrate(lambda z: np.exp(kap * (yy - z)) * f(z), yy, b)
                val.append((left + right) / (2 * kap))
                der.append(0.5 * (-left + right))
            else:
                val.append(-_integrate(lambda z: (yy - z) * f(z), a, yy))
                der.append(-_integrate(f, a, yy))
        return np.array(val), np.array(der)

    def evaluate(self, side, jp, y3, derivative: bool = False) -> np.ndarray:
        y3 = np.atleast_1d(np.asarray(y3, dtype=float))
        kap = float(np.hypot(*jp))
        c1, c2 = self.coeffs[(side, jp)]
        pv, pd = self._particular(side, jp, y3)
        if kap > 0:
            hom = c1 * np.exp(kap * y3) + c2 * np.exp(-kap * y3)
            dhom = kap * (c1 * np.exp(kap * y3) - c2 * np.exp(-kap * y3))
        else:
            hom = c1 + c2 * y3
            dhom = c2 + 0 * y3
        return dhom + pd if derivative else hom + pv


def laplace_strip_solve(modes: dict, normalization: float = 0.0, tol: float = 1e-9) -> LaplaceSolution:
    """Coupled Neumann problems -q'' + |j'|^2 q = f on (0, 1) and (-1, 0), per y' mode.

    modes[j'] = {"source": {side: callable or None}, "neumann": {side: dq/dy3 at y3 = 0},
    "outer": {side: dq/dy3 at y3 = side}, "jump": q+(0) - q-(0)}.
    Nonzero modes are determined by the four Neumann conditions and the jump
    is checked (JumpIncompatible reports the defect).  The zero mode needs the
    Fredholm condition on each side; its constant is fixed by the jump and by
    int q+ + int q- = normalization.
    """
    coeffs, sources = {}, {}
    for jp, data in modes.items():
        jp = tuple(int(v) for v in jp)
        src = data.get("source", {}) or {}
        for s in SIDES:
            sources[(s, jp)] = src.get(s)
    sol = LaplaceSolution(coeffs, sources)
    for jp, data in modes.items():
        jp = tuple(int(v) for v in jp)
        kap = float(np.hypot(*jp))
        neu, outer = data.get("neumann", {}), data.get("outer", {})
        jump = complex(data.get("jump", 0.0))
        for s in SIDES:
            coeffs[(s, jp)] = (0.0, 0.0)
        if kap > 0:
            for s in SIDES:
                a, b = LaplaceSolution.intervals[s]
                inner, out_end = (a, b) if s == 1 else (b, a)
                _, d_in = sol._particular(s, jp, np.array([inner]))
                _, d_out = sol._particular(s, jp, np.array([out_end]))
                M = np.array([[kap * np.exp(kap * inner), -kap * np.exp(-kap * inner)],
                              [kap * np.exp(kap * out_end), -kap * np.exp(-kap * out_end)]])
                rhs = np.array([neu.get(s, 0.0) - d_in[0], outer.get(s, 0.0) - d_out[0]], complex)
                coeffs[(s, jp)] = tuple(np.linalg.solve(M, rhs))
            defect = sol.evaluate(1, jp, 0.0)[0] - sol.evaluate(-1, jp, 0.0)[0] - jump
            if abs(defect) > tol * max(1.0, abs(jump)):
                raise JumpIncompatible(f"mode {jp}: jump defect {abs(defect):.3e}")
            continue
        # zero mode: q = A + B y3 + particular
        means = {}
        for s in SIDES:
            a, b = LaplaceSolution.intervals[s]
            inner, out_end = (a, b) if s == 1 else (b, a)
            f = sources.get((s, jp))
            total = _integrate(f, a, b) if f is not None else 0.0
            # integral of q'' over the interval equals -int f
            d_out = outer.get(s, 0.0)
            d_in = neu.get(s, 0.0)
            defect = (d_out - d_in) * s + total
            if abs(defect) > tol * max(1.0, abs(total)):
                raise FredholmViolated(f"side {s:+d}: Fredholm defect {abs(defect):.3e}")
            _, p_der = sol._particular(s, jp, np.array([a]))
            B = (d_in if s == 1 else d_out) - p_der[0]
            coeffs[(s, jp)] = (0.0, B)
            means[s] = _integrate(lambda y, s=s: sol.evaluate(s, jp, y), a, b)
        # constants: A+ - A- fixed by the jump, A+ + A- by the normalization
        q0 = sol.evaluate(1, jp, 0.0)[0] - sol.evaluate(-1, jp, 0.0)[0]
        d = jump - q0
        # A+ - A- = d, A+ + A- = normalization - means+ - means-   (unit-length intervals)
        ssum = normalization - means[1] - means[-1]
        A_plus, A_minus = 0.5 * (ssum + d), 0.5 * (ssum - d)
        coeffs[(1, jp)] = (A_plus, coeffs[(1, jp)][1])
        coeffs[(-1, jp)] = (A_minus, coeffs[(-1, jp)][1])
    return sol


def wave_coefficients(config: FrequencyConfig, j1: float, j2: float) -> tuple:
    """(a, b, c) with a d_t^2 + b d_t + c the front-mean wave operator on exp(i j'.y')."""
    a, b, c = 0.0, 0.0j, 0.0
    for s in SIDES:
        uj = float(config.sheet.velocity(s)[:2] @ (j1, j2))
        hj = float(config.sheet.field(s)[:2] @ (j1, j2))
        a += 1.0
        b += 2j * uj
        c += -uj * uj + hj * hj
    return a, b, c


def wave_roots(config: FrequencyConfig, j1: float, j2: float) -> np.ndarray:
    """Characteristic roots lambda (purely imaginary and distinct under stability)."""
    return np.roots(wave_coefficients(config, j1, j2))


def front_mean_wave_solve(source, config: FrequencyConfig, J: int, dt: float, t_final: float,
                          init=None, tol: float = 1e-12) -> np.ndarray:
    """Solve sum_side [(d_t + u.grad)^2 - (H.grad)^2] Psi = source.

    source(t) returns y' Fourier coefficients (2J+1, 2J+1); init is None (zero
    data) or a pair (Psi(0), dPsi/dt(0)) of such arrays.  Each mode is a
    constant-coefficient ODE a Psi'' + b Psi' + c Psi = S, solved exactly: the
    homogeneous part from the two characteristic roots, the forced part by
    Duhamel's formula with the exact impulse response (Gauss-Legendre in time).
    Returns the samples (nt, 2J+1, 2J+1).
    """
    n = _step_count_wave(dt, t_final)
    times = np.arange(n + 1) * dt
    size = 2 * J + 1
    out = np.zeros((n + 1, size, size), complex)
    probe = np.linspace(0.0, t_final, 9)
    if any(abs(np.asarray(source(t))[J, J]) > tol for t in probe):
        raise NotMeanFree("the wave source has a nonzero y' mean")
    p0, v0 = (np.zeros((size, size)), np.zeros((size, size))) if init is None else \
        (np.asarray(init[0], complex), np.asarray(init[1], complex))
    if abs(p0[J, J]) > tol or abs(v0[J, J]) > tol:
        raise NotMeanFree("the initial front mean must vanish")
    # source samples on composite Gauss-Legendre nodes shared by every mode
    pieces = max(4, int(np.ceil(t_final / 0.05)))
    edges = np.linspace(0.0, t_final, pieces + 1)
    js = np.arange(-J, J + 1)
    for a_i, j1 in enumerate(js):
        for b_i, j2 in enumerate(js):
            if j1 == 0 and j2 == 0:
                continue
            a, b, c = wave_coefficients(config, j1, j2)
            l1, l2 = np.roots([a, b, c])
            if abs(l1 - l2) < 1e-10:
                raise ValueError(f"double characteristic root at mode {(j1, j2)}")

            def green(tau, l1=l1, l2=l2, a=a):
                return (np.exp(l1 * tau) - np.exp(l2 * tau)) / (a * (l1 - l2))

            # homogeneous part: A e^{l1 t} + B e^{l2 t} with the initial data
            A = (v0[a_i, b_i] - l2 * p0[a_i, b_i]) / (l1 - l2)
            B = p0[a_i, b_i] - A
            out[:, a_i, b_i] = A * np.exp(l1 * times) + B * np.exp(l2 * times)
            for i, t in enumerate(times):
                if t == 0:
                    continue
                acc = 0.0
                for lo, hi in zip(edges[:-1], edges[1:]):
                    if lo >= t:
                        break
                    hi = min(hi, t)
                    z = 0.5 * (hi - lo) * _GL_X + 0.5 * (hi + lo)
                    vals = np.array([np.asarray(source(zz))[a_i, b_i] for zz in z])
                    acc += 0.5 * (hi - lo) * np.sum(_GL_W * green(t - z) * vals)
                out[i, a_i, b_i] += acc
    return out


def _step_count_wave(dt: float, t_final: float) -> int:
    n = int(round(t_final / dt))
    if dt <= 0 or abs(n * dt - t_final) > 1e-9 * max(1.0, t_final):
        raise GridMismatch(f"t_final={t_final} is not a multiple of dt={dt}")
    return n


def transport_symbol(config: FrequencyConfig, side: int, j1: float, j2: float) -> np.ndarray:
    """4x4 symmetric symbol M(j') with the system d_t V + i M V = S on exp(i j'.y')."""
    uj = float(config.sheet.velocity(side)[:2] @ (j1, j2))
    hj = float(config.sheet.field(side)[:2] @ (j1, j2))
    return np.array([[uj, 0, -hj, 0], [0, uj, 0, -hj], [-hj, 0, uj, 0], [0, -hj, 0, uj]], float)


def mean_transport_solve(init: np.ndarray, config: FrequencyConfig, side: int, dt: float,
                         t_final: float, source=None) -> np.ndarray:
    """Exact per-mode solution of the tangential fast-mean system.

    init has shape (4, 2J+1, 2J+1, ...) (y' Fourier coefficients, extra
    parametric axes allowed); source(t) has the same shape or is None.
    Returns samples (nt, 4, 2J+1, 2J+1, ...).
    """
    init = np.asarray(init, dtype=complex)
    J = (init.shape[1] - 1) // 2
    n = int(round(t_final / dt))
    times = np.arange(n + 1) * dt
    out = np.zeros((n + 1,) + init.shape, complex)
    js = np.arange(-J, J + 1)
    for a_i, j1 in enumerate(js):
        for b_i, j2 in enumerate(js):
            M = transport_symbol(config, side, j1, j2)
            w, V = np.linalg.eigh(M)
            v0 = init[:, a_i, b_i]
            for i, t in enumerate(times):
                prop = (V * np.exp(-1j * w * t)) @ V.T
                val = np.tensordot(prop, v0, axes=([1], [0]))
                if source is not None and t > 0:
                    def integrand(z, t=t):
                        vals = []
                        for zz in z:
                            P = (V * np.exp(-1j * w * (t - zz))) @ V.T
                            vals.append(np.tensordot(P, np.asarray(source(zz))[:, a_i, b_i],
                                                     axes=([1], [0])))
                        return np.moveaxis(np.array(vals), 0, -1)
                    x = 0.5 * t * _GL_X + 0.5 * t
                    val = val + 0.5 * t * np.sum(integrand(x) * _GL_W, axis=-1)
                out[i, :, a_i, b_i] = val
    return out


def transport_propagator(config: FrequencyConfig, side: int, j1: float, j2: float, t: float):
    """exp(-i M t) via the matrix exponential (oracle for the eigen-decomposition)."""
    return expm(-1j * transport_symbol(config, side, j1, j2) * t)


# ------------------------------------------------------------ approximate solution

def admissible_eps(config: FrequencyConfig, ell: int) -> float:
    if int(ell) != ell or ell < 1:
        raise ValueError("the ladder index must be a positive integer")
    return 1.0 / (ell * math.hypot(config.p, config.q))


class ApproxSolution:
    """Approximate solution of order M in physical variables (t, x) on a trajectory grid."""

    def __init__(self, order: int, config: FrequencyConfig, psi2: Trajectory, eps: float,
                 corrector: CorrectorResult | None = None, cutoff=None, grid=None,
                 shared: dict | None = None):
        if order not in (1, 2):
            raise OrderUnsupported("approximate solutions are built for M in {1, 2}")
        if order == 2 and corrector is None:
            raise ValueError("order 2 needs the first corrector")
        ell = 1.0 / (eps * math.hypot(config.p, config.q))
        if abs(ell - round(ell)) > 1e-9:
            raise ValueError("eps is not on the admissible ladder")
        self.order, self.config, self.psi2, self.eps = order, config, psi2, float(eps)
        self.corrector = corrector
        self.cutoff = CutoffFunction.bump() if cutoff is None else cutoff
        self.grid = SlowGrid(3 * psi2.J) if grid is None else grid
        # profile data do not depend on eps; instances on one ladder may share them
        self._cache = {} if shared is None else shared

    # --- profiles at a time sample
    def _level(self, n: int) -> dict:
        if n in self._cache:
            return self._cache[n]
        if self.order == 2:
            h = self.corrector.hierarchy(n)
        else:
            h = ProfileHierarchy(jet_from_trajectory(self.psi2, n, self.config), self.config,
                                 self.cutoff, self.grid)
        levels = {1: (h.U1, h.dU1)}
        fronts = {2: (h.jet.psi2, h.jet.dpsi2)}
        if self.order == 2:
            levels[2] = (h.U2, h.dU2)
            fronts[3] = (h.jet.psi3, h.jet.dpsi3)
        derived = {}
        for m, (U, dU) in levels.items():
            for s in SIDES:
                P = U[s]
                derived[(m, s)] = {"val": P, "t": dU[s], "y1": P.d_y(1), "y2": P.d_y(2),
                                   "y3": P.d_y3(), "Y": P.d_Y(), "th": P.d_theta()}
        self._cache[n] = {"profiles": derived, "fronts": fronts, "hier": h}
        return self._cache[n]

    def _theta(self, t, x1, x2):
        xi = self.config.xi
        return (self.config.tau * t + xi[0] * x1 + xi[1] * x2) / self.eps

    def front(self, n: int, x1, x2):
        """psi_app and its derivatives (t, x1, x2) at sample n."""
        lev = self._level(n)
        t = self.psi2.times[n]
        eps, xi, tau = self.eps, self.config.xi, self.config.tau
        th = self._theta(t, x1, x2)
        val = dt = d1 = d2 = 0.0
        for m, (psi, dpsi) in lev["fronts"].items():
            e = eps ** m
            p = psi.evaluate(x1, x2, th)
            p_th = _spec_eval(psi, x1, x2, th, theta=True)
            p_1 = _spec_eval(psi, x1, x2, th, y=1)
            p_2 = _spec_eval(psi, x1, x2, th, y=2)
            p_t = dpsi.evaluate(x1, x2, th)
            val = val + e * p
            dt = dt + e * (p_t + tau / eps * p_th)
            d1 = d1 + e * (p_1 + xi[0] / eps * p_th)
            d2 = d2 + e * (p_2 + xi[1] / eps * p_th)
        if np.any(np.abs(val) >= 1.0):
            raise FrontEscapesStrip("the approximate front leaves the strip")
        return val, dt, d1, d2

    def fields(self, n: int, side: int, x1, x2, x3):
        """(U, dU/dt, dU/dx1, dU/dx2, dU/dx3), each of shape (P, 7), real."""
        x1, x2, x3 = (np.asarray(v, dtype=float).ravel() for v in np.broadcast_arrays(x1, x2, x3))
        lev = self._level(n)
        eps, cfg = self.eps, self.config
        t = self.psi2.times[n]
        psi, psi_t, psi_1, psi_2 = self.front(n, x1, x2)
        chi, dchi = self.cutoff(x3), self.cutoff.derivative(x3, 1)
        y3 = x3 - chi * psi
        Y3 = (x3 - psi) / eps
        th = self._theta(t, x1, x2)
        if np.any(side * Y3 < -1e-12):
            raise ValueError("sample points on the wrong side of the front")
        Y3 = np.where(side * Y3 < 0, 0.0, Y3)
        P = x1.size
        U = np.tile(cfg.sheet.state(side).astype(complex), (P, 1))
        Ut = np.zeros((P, 7), complex)
        Ux = [np.zeros((P, 7), complex) for _ in range(3)]
        for m in sorted(k for (k, s) in lev["profiles"] if s == side):
            d = lev["profiles"][(m, side)]
            ev = {name: prof.evaluate(x1, x2, y3, Y3, th, self.cutoff) for name, prof in d.items()}
            e = eps ** m
            U += e * ev["val"]
            Ut += e * (ev["t"] + ev["y3"] * (-chi * psi_t)[:, None] + ev["Y"] * (-psi_t / eps)[:, None]
                       + ev["th"] * (cfg.tau / eps))
            for j, pj in ((0, psi_1), (1, psi_2)):
                Ux[j] += e * (ev["y%d" % (j + 1)] + ev["y3"] * (-chi * pj)[:, None]
                              + ev["Y"] * (-pj / eps)[:, None] + ev["th"] * (cfg.xi[j] / eps))
            Ux[2] += e * (ev["y3"] * (1.0 - dchi * psi)[:, None] + ev["Y"] / eps)
        return U.real, Ut.real, Ux[0].real, Ux[1].real, Ux[2].real

    def interior_residual(self, n: int, side: int, x1, x2, x3) -> dict:
        U, Ut, U1, U2, U3 = self.fields(n, side, x1, x2, x3)
        U0 = self.config.sheet.state(side)
        W = U - U0
        R = Ut @ A0.T
        for alpha, dU in ((1, U1), (2, U2), (3, U3)):
            R = R + dU @ flux_jacobian(alpha, U0).T + hessian_apply(alpha, W, dU)
        divH = U1[:, 3] + U2[:, 4] + U3[:, 5]
        return {"momentum": np.max(np.abs(R[:, :3]), axis=1), "induction": np.max(np.abs(R[:, 3:6]), axis=1),
                "div_u": np.abs(R[:, 6]), "div_H": np.abs(divH)}

    def jump_residual(self, n: int, x1, x2) -> dict:
        psi, psi_t, psi_1, psi_2 = self.front(n, x1, x2)
        out = {"kinematic": 0.0, "magnetic": 0.0}
        q = {}
        for s in SIDES:
            U, *_ = self.fields(n, s, x1, x2, psi)
            un = U[:, 2] - U[:, 0] * psi_1 - U[:, 1] * psi_2
            hn = U[:, 5] - U[:, 3] * psi_1 - U[:, 4] * psi_2
            out["kinematic"] = np.maximum(out["kinematic"], np.abs(psi_t - un))
            out["magnetic"] = np.maximum(out["magnetic"], np.abs(hn))
            q[s] = U[:, 6]
        out["pressure"] = np.abs(q[1] - q[-1])
        return out

    def wall_residual(self, n: int, x1, x2) -> np.ndarray:
        worst = 0.0
        for s in SIDES:
            U, *_ = self.fields(n, s, x1, x2, np.full(np.size(x1), float(s)))
            worst = np.maximum(worst, np.maximum(np.abs(U[:, 2]), np.abs(U[:, 5])))
        return worst


def _spec_eval(spec: TorusSpectrum, y1, y2, angle, y=None, theta: bool = False) -> np.ndarray:
    c = _spec_derivative(spec, y, theta)
    return TorusSpectrum(c, spec.J, spec.K).evaluate(y1, y2, angle)


def assemble_approximate(order: int, psi2: Trajectory, config: FrequencyConfig, eps: float,
                         corrector: CorrectorResult | None = None, cutoff=None) -> ApproxSolution:
    return ApproxSolution(order, config, psi2, eps, corrector, cutoff)


@dataclass
class ResidualTable:
    order: int
    eps: list
    rows: list            # dicts: eps, name, sup
    slopes: dict

    def sup(self, name: str) -> list:
        return [r["sup"] for r in self.rows if r["name"] == name]


def _sample_points(count: int, seed: int, dims: int) -> np.ndarray:
    return qmc.Halton(d=dims, scramble=True, seed=seed).random(count)


def residual_study(order: int, psi2: Trajectory, config: FrequencyConfig, ladder=(4, 8, 16, 32, 64),
                   counts: int = 10000, seed: int = 0, time_indices=None,
                   corrector: CorrectorResult | None = None, cutoff=None) -> ResidualTable:
    """Sup norms of the residuals over quasi-random samples and log-log slopes in eps.

    Half of the interior samples lie in the fast layer (|x3 - psi| <= 8 eps),
    half anywhere in the strip.
    """
    if time_indices is None:
        last = len(psi2.times) - 1
        time_indices = sorted({0, last // 2, last})
    pts = _sample_points(counts, seed, 4)
    per_time = max(1, counts // len(time_indices))
    rows, eps_list = [], []
    shared = {}
    for ell in ladder:
        eps = admissible_eps(config, ell)
        eps_list.append(eps)
        app = ApproxSolution(order, config, psi2, eps, corrector, cutoff, shared=shared)
        sups = {}
        for i, n in enumerate(time_indices):
            chunk = pts[i * per_time:(i + 1) * per_time]
            x1, x2 = 2 * np.pi * chunk[:, 0], 2 * np.pi * chunk[:, 1]
            psi = app.front(n, x1, x2)[0]
            layer = chunk[:, 3] < 0.5
            for s in SIDES:
                dist = np.where(layer, 8 * eps * chunk[:, 2], (1.0 - 1e-9) * chunk[:, 2] * (1 - s * psi))
                x3 = psi + s * dist
                res = app.interior_residual(n, s, x1, x2, x3)
                for name, v in res.items():
                    sups[name] = max(sups.get(name, 0.0), float(np.max(v)))
                # diagnostic: samples where the cut-off is identically one
                plateau = np.abs(x3) + np.abs(psi) <= 1.0 / 3.0
                if np.any(plateau):
                    worst = np.max([np.max(v[plateau]) for v in res.values()])
                    sups["interior_plateau"] = max(sups.get("interior_plateau", 0.0), float(worst))
            for name, v in app.jump_residual(n, x1, x2).items():
                sups[name] = max(sups.get(name, 0.0), float(np.max(v)))
            sups["walls"] = max(sups.get("walls", 0.0), float(np.max(app.wall_residual(n, x1, x2))))
        sups["interior"] = max(sups[k] for k in ("momentum", "induction", "div_u", "div_H"))
        sups["jump"] = max(sups["kinematic"], sups["magnetic"])
        for name, v in sups.items():
            rows.append({"eps": eps, "name": name, "sup": v})
    slopes = {}
    names = sorted({r["name"] for r in rows})
    for name in names:
        vals = np.array([r["sup"] for r in rows if r["name"] == name])
        if np.all(vals > 0):
            slopes[name] = float(np.polyfit(np.log(eps_list), np.log(vals), 1)[0])
    return ResidualTable(order, eps_list, rows, slopes)
