"""Cut-off expansion combinatorics for the unstraightened normal coordinate.

The straightening change of variables reads y3 = x3 - chi(x3) psi with
psi = sum_{m>=1} eps^m psi^m.  Expanding chi(x3) and chi'(x3) in powers of eps
gives the coefficient functions chi^[m] and chidot^[m]:

    chi^[m]    = sum_{n=1}^{m} d^{n-1}{chi' chi^n} sum_{<mu>=m, |mu|=n} psi^mu / mu!
    chidot^[m] = sum_{n=1}^{m} d^{n-1}{chi'' chi^n} sum_{<mu>=m, |mu|=n} psi^mu / mu!

with chi^[0] = chi and chidot^[0] = chi'.  This module provides

* index sequences (finitely supported multiplicity vectors) and their
  enumeration by weight,
* two cut-off back-ends: exact rational polynomials and a smooth plateau bump,
* closed-form coefficient functions and the recursive Faa di Bruno route,
* a numerical inversion oracle for the expansion,
* numerical checks of the symmetry formulas and exact checks of the
  Leibniz-type identities and of the symmetric polynomial Q_sharp.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache
from itertools import combinations

import mpmath
import numpy as np
import sympy as sp
from sympy.polys.domains import QQ
from sympy.polys.rings import ring

from .errors import (IdentityViolated, IllConditionedFit, InversionFailed,
                     NegativeOrder, ProfilesMissing)

MAX_WEIGHT = 12
TANGENTIAL = ("t", "y1", "y2", "theta")
_Y = sp.Symbol("y")


# ------------------------------------------------------------ index sequences

@dataclass(frozen=True)
class IndexSequence:
    """Finitely supported map l -> mu_l (l >= 1), stored as (mu_1, ..., mu_r)."""
    mult: tuple

    def __post_init__(self):
        mult = tuple(int(v) for v in self.mult)
        if any(v < 0 for v in mult):
            raise ValueError("multiplicities must be nonnegative")
        while mult and mult[-1] == 0:
            mult = mult[:-1]
        object.__setattr__(self, "mult", mult)

    @classmethod
    def from_parts(cls, parts) -> "IndexSequence":
        """Build from a multiset of positive integers, e.g. a partition."""
        parts = list(parts)
        top = max(parts, default=0)
        mult = [0] * top
        for p in parts:
            mult[p - 1] += 1
        return cls(tuple(mult))

    def __getitem__(self, ell: int) -> int:
        return self.mult[ell - 1] if 1 <= ell <= len(self.mult) else 0

    @property
    def length(self) -> int:
        return sum(self.mult)

    @property
    def weight(self) -> int:
        return sum((i + 1) * v for i, v in enumerate(self.mult))

    @property
    def factorial(self) -> int:
        return math.prod(math.factorial(v) for v in self.mult)

    def items(self):
        return [(i + 1, v) for i, v in enumerate(self.mult) if v]


def _partitions(m: int, largest: int):
    if m == 0:
        yield ()
        return
    for first in range(min(m, largest), 0, -1):
        for rest in _partitions(m - first, first):
            yield (first,) + rest


@lru_cache(maxsize=None)
def index_sequences(weight: int, length: int | None = None) -> tuple:
    """All index sequences of the given weight (and optionally length)."""
    if weight < 0:
        raise NegativeOrder(f"weight {weight} < 0")
    if weight > MAX_WEIGHT:
        raise ValueError(f"weight {weight} exceeds the enumeration cap {MAX_WEIGHT}")
    out = [IndexSequence.from_parts(p) for p in _partitions(weight, weight)]
    if length is not None:
        out = [mu for mu in out if mu.length == length]
    return tuple(out)


# ------------------------------------------------------------ jet arithmetic

def _jet_mul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Truncated product of Taylor jets stored along the last axis."""
    n = a.shape[-1]
    out = np.zeros(np.broadcast_shapes(a.shape, b.shape), dtype=np.result_type(a, b))
    for i in range(n):
        out[..., i:] += a[..., i:i + 1] * b[..., :n - i]
    return out


def _jet_pow(a: np.ndarray, n: int) -> np.ndarray:
    out = np.zeros_like(a)
    out[..., 0] = 1.0
    for _ in range(n):
        out = _jet_mul(out, a)
    return out


def _sigmoid_jet(w: np.ndarray) -> np.ndarray:
    """Jet of h = 1/(1 + exp(-w)) from the jet of w, using h' = h (1 - h) w'."""
    n = w.shape[-1]
    h = np.zeros_like(w)
    p = np.zeros_like(w)
    h[..., 0] = 0.5 * (1.0 + np.tanh(0.5 * w[..., 0]))
    p[..., 0] = h[..., 0] * (1.0 - h[..., 0])
    for k in range(1, n):
        h[..., k] = sum(j * w[..., j] * p[..., k - j] for j in range(1, k + 1)) / k
        hh = sum(h[..., i] * h[..., k - i] for i in range(k + 1))
        p[..., k] = h[..., k] - hh
    return h


# ------------------------------------------------------------ cut-off functions

@dataclass(frozen=True)
class CutoffFunction:
    """Cut-off chi of the normal variable.

    kind == "polynomial": chi(y) = sum coeffs[i] y^i with rational coefficients
    (used for the exact identities; no plateau or support constraint).
    kind == "bump": chi = 1 on [-1/3, 1/3], chi = 0 for |y| >= 2/3 and
    chi(y) = 1/(1 + exp(g(2 - 3|y|))) in between, g(s) = 1/s - 1/(1 - s).
    """
    kind: str = "bump"
    coeffs: tuple = ()

    @classmethod
    def polynomial(cls, coeffs) -> "CutoffFunction":
        return cls("polynomial", tuple(Fraction(c) for c in coeffs))

    @classmethod
    def bump(cls) -> "CutoffFunction":
        return cls("bump", ())

    @property
    def is_polynomial(self) -> bool:
        return self.kind == "polynomial"

    @property
    def poly(self) -> sp.Poly:
        if not self.is_polynomial:
            raise TypeError("the plateau bump has no polynomial representation")
        return sp.Poly([sp.Rational(c.numerator, c.denominator) for c in reversed(self.coeffs)]
                       or [0], _Y, domain=QQ)

    def jet(self, y, order: int) -> np.ndarray:
        """Taylor coefficients chi^{(j)}(y) / j!, j = 0..order, on the last axis."""
        y = np.asarray(y, dtype=float)
        out = np.zeros(y.shape + (order + 1,))
        if self.is_polynomial:
            c = [float(v) for v in self.coeffs]
            for j in range(order + 1):
                # j-th Taylor coefficient of sum c_i y^i
                acc = np.zeros_like(y)
                for i in range(len(c) - 1, j - 1, -1):
                    acc = acc * y + c[i] * math.comb(i, j)
                out[..., j] = acc
            return out
        a = np.abs(y)
        sign = np.where(y < 0, -1.0, 1.0)
        out[..., 0] = np.where(a <= 1.0 / 3.0, 1.0, 0.0)
        s = 2.0 - 3.0 * a
        mid = (s > 1e-3) & (s < 1.0 - 1e-3)
        near_one = (s >= 1.0 - 1e-3) & (s < 1.0)
        out[..., 0] = np.where(near_one, 1.0, out[..., 0])
        if np.any(mid):
            am = a[mid]
            s0 = 2.0 - 3.0 * am
            r0 = 3.0 * am - 1.0          # = 1 - s
            k = np.arange(order + 1)
            # w = -g(s(a)) = -1/s + 1/(1-s), as jets in a
            w = (-(1.0 / s0)[:, None] * (3.0 / s0)[:, None] ** k
                 + (1.0 / r0)[:, None] * (-3.0 / r0)[:, None] ** k)
            h = _sigmoid_jet(w)
            h *= sign[mid][:, None] ** k
            out[mid] = h
        return out

    def derivative(self, y, order: int = 0) -> np.ndarray:
        return self.jet(y, order)[..., order] * math.factorial(order)

    def __call__(self, y):
        return self.derivative(y, 0)


# ------------------------------------------------------------ coefficient functions

@dataclass
class YFunction:
    """Function of the normal variable, exact when `poly` is set."""
    evaluator: object
    poly: sp.Poly | None = None

    def __call__(self, y, order: int = 0) -> np.ndarray:
        if self.poly is not None:
            p = self.poly.diff((_Y, order)) if order else self.poly
            c = [float(v) for v in p.all_coeffs()]
            return np.polyval(c, np.asarray(y, dtype=float))
        return self.evaluator(np.asarray(y, dtype=float), order)


def _cal_f_poly(L: int, p: sp.Poly, dotted: bool) -> sp.Poly:
    if not dotted:
        return (p ** (L + 1)).diff((_Y, L)) * sp.Rational(1, L + 1) if L else p
    if L == 0:
        return p.diff(_Y)
    return (p.diff((_Y, 2)) * p ** L).diff((_Y, L - 1))


def _cal_f_numeric(L: int, chi: CutoffFunction, dotted: bool):
    def evaluate(y, order=0):
        if not dotted:
            n = L + order
            jet = _jet_pow(chi.jet(y, n), L + 1)
            return jet[..., n] * math.factorial(n) / (L + 1)
        if L == 0:
            return chi.derivative(y, 1 + order)
        n = L - 1 + order
        base = chi.jet(y, n + 2)
        second = np.zeros_like(base[..., :n + 1])
        for j in range(n + 1):
            second[..., j] = base[..., j + 2] * (j + 2) * (j + 1)
        jet = _jet_mul(second, _jet_pow(base[..., :n + 1], L))
        return jet[..., n] * math.factorial(n)
    return evaluate


def cal_f(L: int, chi: CutoffFunction, dotted: bool = False) -> YFunction:
    """Coefficient function F_L = d^L{chi^{L+1}}/(L+1), or Fdot_L = d^{L-1}{chi'' chi^L}.

    Fdot_0 = chi'.  Exact (sympy Poly over QQ) for polynomial cut-offs.
    """
    if L < 0:
        raise NegativeOrder(f"order L={L} < 0")
    if chi.is_polynomial:
        return YFunction(None, _cal_f_poly(L, chi.poly, dotted))
    return YFunction(_cal_f_numeric(L, chi, dotted))


def cal_f_recursive(L: int, chi: CutoffFunction, dotted: bool = False) -> sp.Poly:
    """Recursive Faa di Bruno route for a polynomial cut-off.

    With FF_L = F_L / L!:  FF_L = sum_{<n>=L} chi^{(|n|)} prod_m FF_{m-1}^{n_m} / n!,
    and the dotted variant uses chi^{(1+|n|)}.
    """
    if L < 0:
        raise NegativeOrder(f"order L={L} < 0")
    p = chi.poly
    scaled = [p]
    for ell in range(1, L + 1):
        scaled.append(_faa_di_bruno_step(ell, p, scaled, 0))
    if not dotted:
        return scaled[L] * math.factorial(L)
    if L == 0:
        return p.diff(_Y)
    return _faa_di_bruno_step(L, p, scaled, 1) * math.factorial(L)


def _faa_di_bruno_step(L, p, scaled, shift):
    total = sp.Poly(0, _Y, domain=QQ)
    for n in index_sequences(L):
        term = p.diff((_Y, n.length + shift)) if n.length + shift else p
        for m, mult in n.items():
            term = term * scaled[m - 1] ** mult
        total = total + term * sp.Rational(1, n.factorial)
    return total


def cal_x(L: int, chi: CutoffFunction) -> sp.Poly:
    """X_L = L F_{L-1}, the coefficient of the normal shift (L >= 1)."""
    if L < 1:
        raise NegativeOrder(f"order L={L} < 1")
    return _cal_f_poly(L - 1, chi.poly, False) * L


def series_coefficients(max_weight: int, chi: CutoffFunction) -> dict:
    """Coefficients F_mu, Fdot_mu, X_mu obtained from the defining fixed point.

    Works in the exact ring QQ[y, psi_1, ..., psi_M] with truncated series in eps:
    X = psi(eps) chi(y + X), chi^[m] = [eps^m] chi(y + X), chidot^[m] = [eps^m] chi'(y + X).
    Returns {"F": {mu: Poly}, "Fdot": {...}, "X": {...}} with the mu! normalization
    chi^[m] = sum F_mu psi^mu / mu!.  Independent of the closed forms.
    """
    M = max_weight
    names = ",".join(["y"] + [f"p{i}" for i in range(1, M + 1)])
    R, *gens = ring(names, QQ)
    y, ps = gens[0], gens[1:]
    p = chi.poly
    derivs = [p.diff((_Y, j)) if j else p for j in range(M + 2)]
    dcoef = [sum((R(QQ.from_sympy(c)) * y ** i for i, c in enumerate(reversed(d.all_coeffs()))), R(0))
             for d in derivs]

    def mul(a, b):
        out = [R(0)] * (M + 1)
        for i in range(M + 1):
            if a[i] == 0:
                continue
            for j in range(M + 1 - i):
                if b[j] != 0:
                    out[i + j] += a[i] * b[j]
        return out

    psi = [R(0)] + list(ps)
    shift = [R(0)] * (M + 1)

    def compose(offset):
        acc = [R(0)] * (M + 1)
        power = [R(1)] + [R(0)] * M
        for N in range(M + 1):
            coef = dcoef[N + offset] * QQ(1, math.factorial(N))
            for i in range(M + 1):
                acc[i] += coef * power[i]
            power = mul(power, shift)
        return acc

    for _ in range(M):
        shift = mul(psi, compose(0))
    chi_ser, chidot_ser = compose(0), compose(1)

    def extract(series):
        out = {}
        for m in range(1, M + 1):
            for mu in index_sequences(m):
                mono = [0] * (M + 1)
                for ell, mult in mu.items():
                    mono[ell] = mult
                coeff = {}
                for monom, c in series[m].terms():
                    if tuple(monom[1:]) == tuple(mono[1:]):
                        coeff[monom[0]] = c
                top = max(coeff, default=0)
                poly = sp.Poly([sp.Rational(int(coeff.get(d, 0).numerator),
                                            int(coeff.get(d, 0).denominator))
                                for d in range(top, -1, -1)], _Y, domain=QQ)
                out[mu] = poly * mu.factorial
        return out

    return {"F": extract(chi_ser), "Fdot": extract(chidot_ser), "X": extract(shift)}


def check_length_dependence(max_weight: int, chi: CutoffFunction) -> bool:
    """F_mu, Fdot_mu, X_mu depend only on |mu|, with the closed forms and X_L = L F_{L-1}."""
    coeffs = series_coefficients(max_weight, chi)
    for mu, poly in coeffs["F"].items():
        if poly != _cal_f_poly(mu.length, chi.poly, False):
            raise IdentityViolated(f"F_mu mismatch for mu={mu.mult}")
    for mu, poly in coeffs["Fdot"].items():
        if poly != _cal_f_poly(mu.length, chi.poly, True):
            raise IdentityViolated(f"Fdot_mu mismatch for mu={mu.mult}")
    for mu, poly in coeffs["X"].items():
        if poly != cal_x(mu.length, chi):
            raise IdentityViolated(f"X_mu mismatch for mu={mu.mult}")
    return True


# ------------------------------------------------------------ profile families

@dataclass
class ProfileFamily:
    """Real trigonometric polynomials psi^1..psi^M in (t, y1, y2, theta).

    psi^m = sum_j Re(amps[m-1][j] exp(i freqs[m-1][j] . (t, y1, y2, theta))).
    psi^0 is identically zero.
    """
    freqs: list
    amps: list

    def __post_init__(self):
        self.freqs = [np.asarray(f, dtype=float).reshape(-1, 4) for f in self.freqs]
        self.amps = [np.asarray(a, dtype=complex).reshape(-1) for a in self.amps]

    @property
    def order(self) -> int:
        return len(self.freqs)

    @classmethod
    def random(cls, M: int, rng, n_modes: int = 3, scale: float = 0.5,
               max_freq: int = 2) -> "ProfileFamily":
        rng = np.random.default_rng(rng)
        freqs, amps = [], []
        for _ in range(M):
            f = rng.integers(-max_freq, max_freq + 1, size=(n_modes, 4))
            f[0, 3] = max(1, abs(f[0, 3]))       # keep a theta dependence
            freqs.append(f)
            amps.append(scale * (rng.normal(size=n_modes) + 1j * rng.normal(size=n_modes)))
        return cls(freqs, amps)

    def value(self, m: int, t, y1, y2, theta, deriv: str | None = None) -> np.ndarray:
        if m == 0:
            return np.zeros(np.broadcast(t, y1, y2, theta).shape)
        if m > self.order or m < 0:
            raise ProfilesMissing(f"profile psi^{m} not provided (have {self.order})")
        f, a = self.freqs[m - 1], self.amps[m - 1]
        phase = (np.multiply.outer(np.asarray(t, float), f[:, 0])
                 + np.multiply.outer(np.asarray(y1, float), f[:, 1])
                 + np.multiply.outer(np.asarray(y2, float), f[:, 2])
                 + np.multiply.outer(np.asarray(theta, float), f[:, 3]))
        amp = a if deriv is None else a * 1j * f[:, TANGENTIAL.index(deriv)]
        return np.real(np.exp(1j * phase) @ amp)

    def total(self, eps, t, y1, y2, theta, upto: int | None = None) -> np.ndarray:
        upto = self.order if upto is None else upto
        return sum(eps ** m * self.value(m, t, y1, y2, theta) for m in range(1, upto + 1))


@dataclass
class SamplePoints:
    t: np.ndarray
    y1: np.ndarray
    y2: np.ndarray
    theta: np.ndarray
    y3: np.ndarray

    @property
    def tangential(self):
        return self.t, self.y1, self.y2, self.theta


def sample_grid(n: int = 16, seed: int = 0, y3_range=(-1.0, 1.0)) -> SamplePoints:
    """n^3 points: n values of theta, n of y3, and n random tangential (t, y1, y2)."""
    rng = np.random.default_rng(seed)
    theta = np.linspace(0.0, 2 * np.pi, n, endpoint=False)
    y3 = np.linspace(y3_range[0], y3_range[1], n)
    tan = rng.uniform(0.0, 2 * np.pi, size=(n, 3))
    i, j, k = np.meshgrid(np.arange(n), np.arange(n), np.arange(n), indexing="ij")
    return SamplePoints(tan[i, 0].ravel(), tan[i, 1].ravel(), tan[i, 2].ravel(),
                        theta[j].ravel(), y3[k].ravel())


# ------------------------------------------------------------ expansion evaluation

class ChiExpansion:
    """Pointwise evaluation of chi^[m], chidot^[m] and their derivatives."""

    def __init__(self, chi: CutoffFunction, profiles: ProfileFamily, points: SamplePoints):
        self.chi, self.profiles, self.points = chi, profiles, points
        self._psi: dict = {}
        self._cal: dict = {}

    def psi(self, m: int, deriv: str | None = None) -> np.ndarray:
        key = (m, deriv)
        if key not in self._psi:
            self._psi[key] = self.profiles.value(m, *self.points.tangential, deriv=deriv)
        return self._psi[key]

    def cal(self, n: int, dotted: bool, order: int) -> np.ndarray:
        key = (n, dotted, order)
        if key not in self._cal:
            self._cal[key] = cal_f(n, self.chi, dotted)(self.points.y3, order)
        return self._cal[key]

    def monomial(self, mu: IndexSequence, deriv: str | None = None) -> np.ndarray:
        """psi^mu / mu!, or its tangential derivative."""
        if deriv is None:
            out = np.ones_like(self.points.y3)
            for ell, mult in mu.items():
                out = out * self.psi(ell) ** mult
            return out / mu.factorial
        out = np.zeros_like(self.points.y3)
        for ell, mult in mu.items():
            term = mult * self.psi(ell) ** (mult - 1) * self.psi(ell, deriv)
            for other, om in mu.items():
                if other != ell:
                    term = term * self.psi(other) ** om
            out += term
        return out / mu.factorial

    def __call__(self, m: int, dotted: bool = False, d_y3: int = 0,
                 deriv: str | None = None) -> np.ndarray:
        if m < 0:
            raise NegativeOrder(f"m={m} < 0")
        if m > self.profiles.order:
            raise ProfilesMissing(f"chi^[{m}] needs psi^1..psi^{m}")
        if m == 0:
            if deriv is not None:
                return np.zeros_like(self.points.y3)
            return self.cal(0, dotted, d_y3)
        out = np.zeros_like(self.points.y3)
        for n in range(1, m + 1):
            sym = sum(self.monomial(mu, deriv) for mu in index_sequences(m, n))
            out += self.cal(n, dotted, d_y3) * sym
        return out


def chi_expansion(m: int, chi: CutoffFunction, profiles: ProfileFamily, dotted: bool = False):
    """Return f(t, y1, y2, theta, y3, d_y3=0, deriv=None) evaluating chi^[m] (or chidot^[m])."""
    if m < 0:
        raise NegativeOrder(f"m={m} < 0")
    if m > profiles.order:
        raise ProfilesMissing(f"chi^[{m}] needs psi^1..psi^{m}")

    def evaluate(t, y1, y2, theta, y3, d_y3: int = 0, deriv: str | None = None):
        shape = np.broadcast(t, y1, y2, theta, y3).shape
        pts = SamplePoints(*(np.broadcast_to(np.asarray(v, float), shape).ravel()
                             for v in (t, y1, y2, theta, y3)))
        return ChiExpansion(chi, profiles, pts)(m, dotted, d_y3, deriv).reshape(shape)
    return evaluate


# ------------------------------------------------------------ inversion oracle

def default_eps_ladder(levels: int = 6, top: float = 1e-6) -> list:
    """Symmetric geometric ladder +-top 2^{-i}, i < levels, as exact binary floats."""
    pos = [top * 2.0 ** -i for i in range(levels)]
    return pos + [-e for e in pos]


def _mp_chi(chi: CutoffFunction, x, order: int):
    """chi(x) or chi'(x) in mpmath arithmetic."""
    if chi.is_polynomial:
        coeffs = [mpmath.mpf(c.numerator) / c.denominator for c in chi.coeffs]
        if order:
            coeffs = [i * c for i, c in enumerate(coeffs)][1:]
        return mpmath.polyval(coeffs[::-1], x) if coeffs else mpmath.mpf(0)
    a = abs(x)
    if a <= mpmath.mpf(1) / 3:
        return mpmath.mpf(1) if order == 0 else mpmath.mpf(0)
    if a >= mpmath.mpf(2) / 3:
        return mpmath.mpf(0)
    s = 2 - 3 * a
    g = 1 / s - 1 / (1 - s)
    h = 1 / (1 + mpmath.exp(g))
    if order == 0:
        return h
    dg_ds = -1 / s ** 2 - 1 / (1 - s) ** 2
    # d/dx h(s(|x|)) = -h (1 - h) g'(s) (-3) sign(x)
    return 3 * h * (1 - h) * dg_ds * mpmath.sign(x)


def invert_straightening(chi: CutoffFunction, y3, shift, tol=None, max_iter: int = 200):
    """Solve y3 = x3 - chi(x3) shift for a scalar x3 (mpmath) by bisection then Newton."""
    y3, shift = mpmath.mpf(y3), mpmath.mpf(shift)
    tol = mpmath.mpf(10) ** (-mpmath.mp.dps + 5) if tol is None else tol
    bound = abs(shift) * _chi_sup(chi) + mpmath.mpf("1e-30")
    lo, hi = y3 - bound, y3 + bound
    probe = np.linspace(float(lo), float(hi), 33)
    if np.any(1.0 - chi.derivative(probe, 1) * float(shift) <= 0):
        raise InversionFailed("straightening map is not monotone for this eps")

    def resid(x):
        return x - _mp_chi(chi, x, 0) * shift - y3
    for _ in range(60):
        mid = (lo + hi) / 2
        if resid(mid) < 0:
            lo = mid
        else:
            hi = mid
    x = (lo + hi) / 2
    for _ in range(max_iter):
        step = resid(x) / (1 - _mp_chi(chi, x, 1) * shift)
        x -= step
        if abs(step) < tol:
            return x
    raise InversionFailed("Newton iteration did not converge")


def _chi_sup(chi: CutoffFunction) -> float:
    if not chi.is_polynomial:
        return 1.0
    ys = np.linspace(-3.0, 3.0, 2001)
    return float(np.max(np.abs(chi(ys)))) * 1.5 + 1.0


def lagrange_inversion_oracle(m: int, chi: CutoffFunction, profiles: ProfileFamily,
                              epsilon_list=None, dotted: bool = False,
                              quantity: str = "chi", degree: int | None = None,
                              dps: int = 40):
    """Numerical eps^m coefficient of chi(x3(eps)) (or chi'(x3), or x3 - y3).

    For each eps the straightening map is inverted pointwise in mpmath
    arithmetic with `dps` digits, and the eps^m coefficient is extracted by a
    least-squares polynomial fit of degree m+2 in eps.  quantity is "chi"
    (dotted selects chi') or "shift" for x3 - y3.  Returns
    f(t, y1, y2, theta, y3) as a float array.
    """
    if m > 6:
        raise ValueError("oracle supports m <= 6")
    eps = default_eps_ladder() if epsilon_list is None else [float(e) for e in epsilon_list]
    degree = m + 2 if degree is None else degree
    if len(eps) < degree + 1:
        raise IllConditionedFit(f"{len(eps)} eps values for a degree-{degree} fit")
    scale = max(abs(e) for e in eps)
    vander = np.vander(np.array(eps) / scale, degree + 1, increasing=True)
    if np.linalg.cond(vander) > 1e12:
        raise IllConditionedFit("eps ladder gives an ill-conditioned fit")

    def evaluate(t, y1, y2, theta, y3):
        shape = np.broadcast(t, y1, y2, theta, y3).shape
        args = [np.broadcast_to(np.asarray(v, float), shape).ravel() for v in (t, y1, y2, theta)]
        y = np.broadcast_to(np.asarray(y3, float), shape).ravel()
        if m == 0 and quantity == "chi":
            return chi.derivative(y, 1 if dotted else 0).reshape(shape)
        upto = min(profiles.order, degree)
        psi = np.array([profiles.value(ell, *args) for ell in range(1, upto + 1)])
        out = np.zeros(y.size)
        with mpmath.workdps(dps):
            mat = mpmath.matrix(vander.tolist())
            normal = mat.T * mat
            for i in range(y.size):
                samples = []
                for e in eps:
                    e_mp = mpmath.mpf(e)
                    shift = sum(e_mp ** (ell + 1) * mpmath.mpf(psi[ell, i]) for ell in range(upto))
                    x = invert_straightening(chi, y[i], shift)
                    if quantity == "shift":
                        samples.append(x - mpmath.mpf(y[i]))
                    else:
                        samples.append(_mp_chi(chi, x, 1 if dotted else 0))
                coeffs = mpmath.lu_solve(normal, mat.T * mpmath.matrix(samples))
                out[i] = float(coeffs[m] / mpmath.mpf(scale) ** m)
        return out.reshape(shape)
    return evaluate


# ------------------------------------------------------------ symmetry formulas

@dataclass
class VerificationReport:
    """Max deviations of identities, keyed by (identity name, l, derivative)."""
    entries: list = field(default_factory=list)
    grid: int = 0
    seed: int | None = None

    def add(self, identity: str, ell: int, deriv: str | None, deviation: float):
        self.entries.append({"identity": identity, "ell": ell, "derivative": deriv,
                             "max_deviation": float(deviation)})

    @property
    def max_deviation(self) -> float:
        return max((e["max_deviation"] for e in self.entries), default=0.0)

    def by_identity(self) -> dict:
        out: dict = {}
        for e in self.entries:
            out[e["identity"]] = max(out.get(e["identity"], 0.0), e["max_deviation"])
        return out

    def to_json(self) -> str:
        return json.dumps({"grid": self.grid, "seed": self.seed, "entries": self.entries,
                           "max_deviation": self.max_deviation}, indent=2, sort_keys=True)


def _compositions(total: int, parts: int):
    if parts == 1:
        yield (total,)
        return
    for first in range(total + 1):
        for rest in _compositions(total - first, parts - 1):
            yield (first,) + rest


def verify_first_symmetry(ell_max: int, chi: CutoffFunction, profiles: ProfileFamily,
                          points: SamplePoints, seed=None) -> VerificationReport:
    """sum_{l1+l2=l} d_a chi^[l1] d_b psi^l2 - d_b chi^[l1] d_a psi^l2 for all pairs (a, b)."""
    ev = ChiExpansion(chi, profiles, points)
    report = VerificationReport(grid=int(round(len(points.y3) ** (1 / 3))), seed=seed)
    for ell in range(ell_max + 1):
        for a, b in combinations(TANGENTIAL, 2):
            acc = np.zeros_like(points.y3)
            for l1 in range(ell + 1):
                l2 = ell - l1
                acc += ev(l1, deriv=a) * ev.psi(l2, b) - ev(l1, deriv=b) * ev.psi(l2, a)
            report.add("first_symmetry", ell, f"{a},{b}", np.max(np.abs(acc)))
    return report


def verify_second_symmetry(ell_max: int, chi: CutoffFunction, profiles: ProfileFamily,
                           points: SamplePoints, seed=None) -> VerificationReport:
    """Normal-derivative identity, dotted transport identity and their combination."""
    ev = ChiExpansion(chi, profiles, points)
    report = VerificationReport(grid=int(round(len(points.y3) ** (1 / 3))), seed=seed)
    for ell in range(ell_max + 1):
        lhs = ev(ell, d_y3=1) - ev(ell, dotted=True)
        rhs = np.zeros_like(lhs)
        for l1, l2, l3 in _compositions(ell, 3):
            if l3:
                rhs += ev(l1, d_y3=1) * ev(l2, dotted=True) * ev.psi(l3)
        report.add("normal_derivative", ell, None, np.max(np.abs(lhs - rhs)))
        for d in TANGENTIAL:
            lhs = ev(ell, dotted=True, deriv=d)
            rhs = np.zeros_like(lhs)
            for l1, l2, l3 in _compositions(ell, 3):
                if l3:
                    rhs += ev(l1) * ev(l2, dotted=True, d_y3=1) * ev.psi(l3, d)
            report.add("dotted_transport", ell, d, np.max(np.abs(lhs - rhs)))

            lhs = np.zeros_like(points.y3)
            for l1 in range(ell + 1):
                l2 = ell - l1
                if l2:
                    lhs += (ev(l1, d_y3=1) * ev.psi(l2, d)
                            - ev(l1, dotted=True, deriv=d) * ev.psi(l2)
                            - ev(l1, dotted=True) * ev.psi(l2, d))
            rhs = np.zeros_like(lhs)
            for l1, l2, l3, l4 in _compositions(ell, 4):
                if l3 and l4:
                    rhs += ((ev(l1, d_y3=1) * ev(l2, dotted=True)
                             - ev(l1) * ev(l2, dotted=True, d_y3=1))
                            * ev.psi(l3) * ev.psi(l4, d))
            report.add("combined", ell, d, np.max(np.abs(lhs - rhs)))
    return report


# ------------------------------------------------------------ exact identities

def leibniz_identity_check(L_max: int, chi: CutoffFunction) -> bool:
    """Exact check of the two Leibniz-type identities and their F-function forms.

    (L+1){chi'' chi^{L+1}}^{(L)} = sum_{l=0}^{L} C(L+1,l){chi'' chi^l}^{(l)}{chi^{L+1-l}}^{(L-l)}
    {chi' chi^L}^{(L)} - chi'{chi^L}^{(L)} = sum_{l=0}^{L-1} C(L,l){chi^l}^{(l)}{chi'' chi^{L-l}}^{(L-1-l)}
    plus Fdot_{L+1} = sum C(L,l) Fdot_l' F_{L-l} and
    FF_L' - FFdot_L = sum_{nu<L} FF_nu' FFdot_{L-1-nu} (FF_L = F_L / L!), for L >= 0.
    Raises IdentityViolated on the first mismatch.
    """
    if L_max > 10:
        raise ValueError("L_max <= 10")
    p = chi.poly
    d1, d2 = p.diff(_Y), p.diff((_Y, 2))

    def der(q, n):
        return q.diff((_Y, n)) if n else q

    for L in range(1, L_max + 1):
        lhs = der(d2 * p ** (L + 1), L) * (L + 1)
        rhs = sum((der(d2 * p ** ell, ell) * der(p ** (L + 1 - ell), L - ell) * math.comb(L + 1, ell)
                   for ell in range(L + 1)), sp.Poly(0, _Y, domain=QQ))
        if lhs != rhs:
            raise IdentityViolated(f"first Leibniz-type identity fails at L={L}")
        lhs = der(d1 * p ** L, L) - d1 * der(p ** L, L)
        rhs = sum((der(p ** ell, ell) * der(d2 * p ** (L - ell), L - 1 - ell) * math.comb(L, ell)
                   for ell in range(L)), sp.Poly(0, _Y, domain=QQ))
        if lhs != rhs:
            raise IdentityViolated(f"second Leibniz-type identity fails at L={L}")
        lhs = _cal_f_poly(L + 1, p, True)
        rhs = sum((_cal_f_poly(ell, p, True).diff(_Y) * _cal_f_poly(L - ell, p, False)
                   * math.comb(L, ell) for ell in range(L + 1)), sp.Poly(0, _Y, domain=QQ))
        if lhs != rhs:
            raise IdentityViolated(f"dotted recursion fails at L={L}")
    for L in range(0, L_max + 1):
        ff = [_cal_f_poly(n, p, False) * sp.Rational(1, math.factorial(n)) for n in range(L + 1)]
        ffd = [_cal_f_poly(n, p, True) * sp.Rational(1, math.factorial(n)) for n in range(L + 1)]
        val = ff[L].diff(_Y) - ffd[L]
        for nu in range(L):
            val = val - ff[nu].diff(_Y) * ffd[L - 1 - nu]
        if not val.is_zero:
            raise IdentityViolated(f"normal-derivative recursion fails at L={L}")
    return True


def q_sharp_value(eta) -> int:
    """2 Q_sharp(eta_0..eta_{L+1}) in exact integer arithmetic (L = len(eta) - 2)."""
    eta = [int(v) for v in eta]
    n = len(eta)
    L = n - 2
    total = sum(eta)
    acc = 2 * (L + 1) * total ** L
    for mask in range(1, (1 << n) - 1):
        size = bin(mask).count("1")
        s_in = sum(eta[i] for i in range(n) if mask >> i & 1)
        acc -= s_in ** (size - 1) * (total - s_in) ** (n - size - 1)
    return acc


def q_sharp_vanishing(L_max: int, trials: int = 100, seed=0, bound: int = 50) -> bool:
    """Q_sharp vanishes at `trials` random integer points for every 1 <= L <= L_max."""
    if L_max > 9:
        raise ValueError("L_max <= 9")
    rng = np.random.default_rng(seed)
    for L in range(1, L_max + 1):
        for _ in range(trials):
            eta = rng.integers(-bound, bound + 1, size=L + 2)
            if q_sharp_value(eta) != 0:
                return False
    return True
