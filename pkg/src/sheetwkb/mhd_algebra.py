"""Background current vortex sheet, admissible frequencies and 7x7 algebra.

State vectors are ordered (u1, u2, u3, H1, H2, H3, q).  The side of the sheet
is encoded as the integer +1 (upper domain) or -1 (lower domain); the strings
"plus" and "minus" are accepted wherever a side is expected.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .errors import (CharacteristicDegeneracy, DegenerateRoot, DirectionExcluded,
                     IdentityViolated, StabilityViolated, ZeroMode, ZeroTau)

SIDES = (1, -1)
TANGENTIAL_MASK = np.array([1, 1, 0, 1, 1, 0, 0], dtype=float)
A0 = np.diag([1.0, 1, 1, 1, 1, 1, 0])


def side_sign(side) -> int:
    if side in (1, "plus", "+"):
        return 1
    if side in (-1, "minus", "-"):
        return -1
    raise ValueError(f"unknown side {side!r}")


def _cross2(u, v) -> float:
    return float(u[0] * v[1] - u[1] * v[0])


@dataclass(frozen=True)
class ReferenceSheet:
    """Piecewise constant background with zero normal components."""
    u_plus: tuple
    u_minus: tuple
    h_plus: tuple
    h_minus: tuple

    def __post_init__(self):
        for name in ("u_plus", "u_minus", "h_plus", "h_minus"):
            vec = tuple(float(x) for x in getattr(self, name))
            if len(vec) == 2:
                vec = vec + (0.0,)
            if len(vec) != 3:
                raise ValueError(f"{name} must have 3 components")
            if vec[2] != 0.0:
                raise ValueError(f"{name} must have zero normal component")
            object.__setattr__(self, name, vec)

    def velocity(self, side) -> np.ndarray:
        return np.array(self.u_plus if side_sign(side) == 1 else self.u_minus)

    def field(self, side) -> np.ndarray:
        return np.array(self.h_plus if side_sign(side) == 1 else self.h_minus)

    def state(self, side) -> np.ndarray:
        u, h = self.velocity(side), self.field(side)
        return np.array([u[0], u[1], 0.0, h[0], h[1], 0.0, 0.0])

    def stability_margin(self) -> float:
        """RHS minus LHS of the planar stability criterion (positive when stable)."""
        jump = np.array(self.u_plus) - np.array(self.u_minus)
        lhs = _cross2(self.h_plus, jump) ** 2 + _cross2(self.h_minus, jump) ** 2
        rhs = 2.0 * _cross2(self.h_plus, self.h_minus) ** 2
        return rhs - lhs


CANON_SHEET = ReferenceSheet((1.0, 0.0, 0.0), (-1.0, 0.0, 0.0), (3.0, 0.0, 0.0), (0.0, 3.0, 0.0))


def lopatinskii(tau, a_plus, a_minus, b_plus, b_minus):
    """Lopatinskii determinant 2 tau^2 + 2 (a+ + a-) tau + a+^2 + a-^2 - b+^2 - b-^2."""
    return (2.0 * tau * tau + 2.0 * (a_plus + a_minus) * tau
            + a_plus ** 2 + a_minus ** 2 - b_plus ** 2 - b_minus ** 2)


@dataclass(frozen=True)
class FrequencyConfig:
    """Admissible frequency (tau, xi) together with every derived scalar.

    Per-side scalars are stored as dicts keyed by +1 / -1.
    """
    sheet: ReferenceSheet
    p: int
    q: int
    xi: tuple
    tau: float
    a: dict
    b: dict
    c: dict
    ell1: dict
    ell2: dict
    group_velocity: tuple
    nonlinear_coeff: float
    root_choice: str = "plus"
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def a_pm(self):
        return self.a[1], self.a[-1]

    @property
    def b_pm(self):
        return self.b[1], self.b[-1]

    @property
    def c_pm(self):
        return self.c[1], self.c[-1]

    @property
    def ell1_pm(self):
        return self.ell1[1], self.ell1[-1]

    @property
    def ell2_pm(self):
        return self.ell2[1], self.ell2[-1]

    @property
    def tau_derivative(self) -> float:
        """d Delta / d tau = 2 (c+ + c-)."""
        return 2.0 * (self.c[1] + self.c[-1])

    def background(self, side) -> np.ndarray:
        return self.sheet.state(side)

    def jacobian(self, side, which: str) -> np.ndarray:
        return jacobian(side, which, self)

    def lopatinskii(self, tau=None) -> float:
        tau = self.tau if tau is None else tau
        return lopatinskii(tau, self.a[1], self.a[-1], self.b[1], self.b[-1])


def validate_assumptions(sheet: ReferenceSheet, p: int, q: int, root_choice: str = "plus",
                         tol: float = 1e-12) -> FrequencyConfig:
    """Check the stability/direction/root assumptions and build a FrequencyConfig."""
    p, q = int(p), int(q)
    if p == 0 and q == 0:
        raise ValueError("(p, q) must be nonzero")
    if root_choice not in ("plus", "minus"):
        raise ValueError("root_choice must be 'plus' or 'minus'")
    scale = max(1.0, *(abs(x) for v in (sheet.u_plus, sheet.u_minus, sheet.h_plus, sheet.h_minus)
                       for x in v)) ** 4
    margin = sheet.stability_margin()
    if not margin > tol * scale:
        raise StabilityViolated(f"stability criterion fails: margin {margin:.3e} <= 0")
    norm = np.hypot(p, q)
    xi = np.array([p / norm, q / norm])
    up, um = sheet.velocity(1)[:2], sheet.velocity(-1)[:2]
    hp, hm = sheet.field(1)[:2], sheet.field(-1)[:2]
    a = {1: float(xi @ up), -1: float(xi @ um)}
    b = {1: float(xi @ hp), -1: float(xi @ hm)}
    da, db, sb = abs(a[1] - a[-1]), abs(b[1] - b[-1]), abs(b[1] + b[-1])
    size = max(1.0, da, db, sb)
    if abs(da - db) <= tol * size or abs(da - sb) <= tol * size:
        raise DirectionExcluded(f"direction ({p},{q}) is orthogonal to an excluded vector")
    s = a[1] + a[-1]
    cst = a[1] ** 2 + a[-1] ** 2 - b[1] ** 2 - b[-1] ** 2
    disc = s * s - 2.0 * cst
    if not disc > 0.0:
        raise DegenerateRoot(f"Lopatinskii discriminant {disc:.3e} is not positive")
    root = np.sqrt(disc)
    tau = (-s + root) / 2.0 if root_choice == "plus" else (-s - root) / 2.0
    if abs(tau) <= tol * max(1.0, abs(s), root):
        raise ZeroTau("selected root tau vanishes")
    c = {side: tau + a[side] for side in SIDES}
    for side in SIDES:
        if abs(c[side] ** 2 - b[side] ** 2) <= tol * max(1.0, c[side] ** 2, b[side] ** 2):
            raise CharacteristicDegeneracy(f"(c)^2 = (b)^2 on side {side:+d}")
    ell1 = {side: 2.0 * b[side] ** 2 - tau * c[side] for side in SIDES}
    ell2 = {side: -(a[side] + c[side]) * b[side] for side in SIDES}
    csum = c[1] + c[-1]
    gv = tuple(float((c[1] * sheet.velocity(1)[j] + c[-1] * sheet.velocity(-1)[j]
                      - b[1] * sheet.field(1)[j] - b[-1] * sheet.field(-1)[j]) / csum)
               for j in range(2))
    nl = (b[1] ** 2 - b[-1] ** 2 - c[1] ** 2 + c[-1] ** 2) / csum
    cfg = FrequencyConfig(sheet=sheet, p=p, q=q, xi=(float(xi[0]), float(xi[1])), tau=float(tau),
                          a=a, b=b, c=c, ell1=ell1, ell2=ell2, group_velocity=gv,
                          nonlinear_coeff=float(nl), root_choice=root_choice)
    h4 = c[1] ** 2 + c[-1] ** 2 - b[1] ** 2 - b[-1] ** 2
    if abs(h4) > 1e-12 * max(1.0, b[1] ** 2 + b[-1] ** 2):
        raise DegenerateRoot(f"root does not satisfy c+^2 + c-^2 = b+^2 + b-^2 ({h4:.3e})")
    return cfg


def canon_config() -> FrequencyConfig:
    """The canonical example: u = (+-1, 0, 0), H+ = (3, 0, 0), H- = (0, 3, 0), xi = (1, 0)."""
    return validate_assumptions(CANON_SHEET, 1, 0, "plus")


# ---------------------------------------------------------------- matrices

def flux_jacobian(alpha: int, state: np.ndarray) -> np.ndarray:
    """Jacobian of the flux f_alpha at a real state (alpha = 1, 2, 3)."""
    u = state[:3]
    h = state[3:6]
    m = np.zeros((7, 7))
    a = alpha - 1
    for i in range(3):
        # momentum: u_a u_i - H_a H_i + q delta_ai
        m[i, a] += u[i]
        m[i, i] += u[a]
        m[i, 3 + a] -= h[i]
        m[i, 3 + i] -= h[a]
        # induction: u_a H_i - H_a u_i
        m[3 + i, a] += h[i]
        m[3 + i, 3 + i] += u[a]
        m[3 + i, 3 + a] -= u[i]
        m[3 + i, i] -= h[a]
    m[a, 6] += 1.0
    m[6, a] = 1.0
    return m


def jacobian(side, which: str, config: FrequencyConfig | None = None,
             sheet: ReferenceSheet | None = None) -> np.ndarray:
    """Return A0, A1, A2, A3 or Acal = tau A0 + xi1 A1 + xi2 A2 on one side."""
    if which == "A0":
        return A0.copy()
    if sheet is None:
        if config is None:
            raise ValueError("a config or a sheet is required")
        sheet = config.sheet
    state = sheet.state(side)
    if which in ("A1", "A2", "A3"):
        return flux_jacobian(int(which[1]), state)
    if which == "Acal":
        if config is None:
            raise ValueError("Acal needs a FrequencyConfig")
        key = ("Acal", side_sign(side))
        if key not in config._cache:
            config._cache[key] = (config.tau * A0 + config.xi[0] * flux_jacobian(1, state)
                                  + config.xi[1] * flux_jacobian(2, state))
        return config._cache[key].copy()
    raise ValueError(f"unknown matrix {which!r}")


def hessian_apply(alpha: int, u, v):
    """Symmetric Hessian of the flux f_alpha applied to (u, v); works on trailing axis 7."""
    u = np.asarray(u)
    v = np.asarray(v)
    a = alpha - 1
    out = np.zeros(np.broadcast_shapes(u.shape, v.shape), dtype=np.result_type(u, v))
    ua, ha = u[..., a], u[..., 3 + a]
    va, ka = v[..., a], v[..., 3 + a]
    for i in range(3):
        out[..., i] = (ua * v[..., i] + va * u[..., i] - ha * v[..., 3 + i] - ka * u[..., 3 + i])
        if i != a:
            out[..., 3 + i] = (ua * v[..., 3 + i] + va * u[..., 3 + i]
                               - ha * v[..., i] - ka * u[..., i])
    return out


def _sgn(k: int) -> int:
    if k == 0:
        raise ZeroMode("mode k = 0 has no surface-wave eigenvector")
    return 1 if k > 0 else -1


def eigenvector_r(config: FrequencyConfig, side, k: int) -> np.ndarray:
    s = side_sign(side)
    sg = _sgn(k)
    xi1, xi2 = config.xi
    c, b = config.c[s], config.b[s]
    return np.array([xi1 * c, xi2 * c, 1j * s * sg * c, xi1 * b, xi2 * b, 1j * s * sg * b,
                     b * b - c * c], dtype=complex)


def eigenvector_l(config: FrequencyConfig, side, k: int) -> np.ndarray:
    s = side_sign(side)
    sg = _sgn(k)
    xi1, xi2 = config.xi
    tau, a, b, c = config.tau, config.a[s], config.b[s], config.c[s]
    return np.array([xi1 * tau, xi2 * tau, 1j * s * sg * tau, 2 * xi1 * b, 2 * xi2 * b,
                     2j * s * sg * b, -tau * (a + c)], dtype=complex)


def hermitian(u, v):
    """Hermitian product sum conj(u_i) v_i over the trailing axis."""
    return np.sum(np.conj(u) * v, axis=-1)


# ------------------------------------------------------ identity suite

def _identity_deviations(config: FrequencyConfig, modes) -> dict:
    """Max deviation of every tabulated Hermitian identity over the given modes."""
    dev = {}

    def record(name, val):
        dev[name] = max(dev.get(name, 0.0), float(abs(val)))

    tau = config.tau
    for s in SIDES:
        u0 = config.sheet.velocity(s)
        h0 = config.sheet.field(s)
        a, b, c = config.a[s], config.b[s], config.c[s]
        mats = {w: jacobian(s, w, config) for w in ("A0", "A1", "A2", "A3", "Acal")}
        for k in modes:
            r, l = eigenvector_r(config, s, k), eigenvector_l(config, s, k)
            sg = _sgn(k)
            # (-/+ A3 + i sgn(k) Acal) R = 0 and the adjoint relation on L
            op = -s * mats["A3"] + 1j * sg * mats["Acal"]
            record("eigen_right", np.max(np.abs(op @ r)))
            record("eigen_left", np.max(np.abs(op.T @ l)))
            record("left_A3_right", hermitian(l, mats["A3"] @ r))
            record("conjugation_r", np.max(np.abs(eigenvector_r(config, s, -k) - np.conj(r))))
            record("conjugation_l", np.max(np.abs(eigenvector_l(config, s, -k) - np.conj(l))))
        for k1, k2 in itertools.product(modes, modes):
            l1, r2 = eigenvector_l(config, s, k1), eigenvector_r(config, s, k2)
            same = 1 + _sgn(k1) * _sgn(k2)
            opp = 1 - _sgn(k1) * _sgn(k2)
            record("L.A0R", hermitian(l1, A0 @ r2) - (tau * c + 2 * b * b) * same)
            for j, name in ((0, "L.A1R"), (1, "L.A2R")):
                expect = (tau * (u0[j] * c - h0[j] * b) * same + 2 * config.xi[j] * tau * (b * b - c * c)
                          + 2 * b * (u0[j] * b - h0[j] * c) * same)
                record(name, hermitian(l1, mats["A" + str(j + 1)] @ r2) - expect)
            record("L.AcalR", hermitian(l1, mats["Acal"] @ r2) - tau * (b * b - c * c) * opp)
        for k1, k2, k3 in itertools.product(modes, modes, modes):
            l1 = eigenvector_l(config, s, k1)
            r2, r3 = eigenvector_r(config, s, k2), eigenvector_r(config, s, k3)
            s1, s2, s3 = _sgn(k1), _sgn(k2), _sgn(k3)
            for j in (0, 1):
                expect = tau * config.xi[j] * (c * c - b * b) * (2 + s1 * (s2 + s3))
                record(f"L.Hess{j + 1}(R,R)", hermitian(l1, hessian_apply(j + 1, r2, r3)) - expect)
            expect = 1j * s * tau * (c * c - b * b) * (s2 + s3 + 2 * s1 * s2 * s3)
            record("L.Hess3(R,R)", hermitian(l1, hessian_apply(3, r2, r3)) - expect)
            scale = max(1.0, abs(c) ** 2, abs(b) ** 2)
            record("Hess3(R,conjR)", np.max(np.abs(
                hessian_apply(3, r2, np.conj(r2))
                - 2 * (c * c - b * b) * np.array([0, 0, 1, 0, 0, 0, 0]))) / scale)
    return dev


def hermitian_identity_suite(config: FrequencyConfig, modes=(-3, -2, -1, 1, 2, 3),
                             tol: float = 1e-10) -> dict:
    """Evaluate all matrix/eigenvector identities; raise if one deviates by more than tol."""
    dev = _identity_deviations(config, modes)
    worst = max(dev.values())
    if worst > tol:
        bad = sorted(k for k, v in dev.items() if v > tol)
        raise IdentityViolated(f"identities violated: {bad} (max deviation {worst:.3e})")
    return {"deviations": dev, "max_deviation": worst}
