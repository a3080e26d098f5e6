"""Nonlocal Hamilton-Jacobi amplitude equation for the leading front.

A front profile psi(y', theta) on T^2 x T is stored by its truncated Fourier
coefficients psi_hat(j', k), |j'|_inf <= J, |k| <= K, with
psi(y', theta) = sum psi_hat(j', k) exp(i (j'.y' + k theta)).
The coefficient array is indexed as coeffs[j1 + J, j2 + J, k + K].

The evolution equation for the oscillating modes reads

    d/dt psi_hat(k) + v_j d/dy_j psi_hat(k) - nl i sgn(k) B(psi, psi)(k) = 0,

with B the bilinear operator built on the kernel
Lambda(k1, k2) = |k1||k2||k1+k2| / (|k1| + |k2| + |k1+k2|).
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import (BlowupDetected, GridMismatch, NotSharp, ResonantZeroSum,
                     TruncationMismatch)
from .mhd_algebra import FrequencyConfig


# ------------------------------------------------------------------ spectra

@dataclass
class TorusSpectrum:
    """Truncated Fourier coefficients of a real function on T^2 x T."""
    coeffs: np.ndarray
    J: int
    K: int

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=complex)
        shape = (2 * self.J + 1, 2 * self.J + 1, 2 * self.K + 1)
        if self.coeffs.shape != shape:
            raise TruncationMismatch(f"coefficient shape {self.coeffs.shape} != {shape}")

    @classmethod
    def zeros(cls, J: int, K: int) -> "TorusSpectrum":
        return cls(np.zeros((2 * J + 1, 2 * J + 1, 2 * K + 1), dtype=complex), J, K)

    @classmethod
    def from_modes(cls, modes: dict, J: int, K: int) -> "TorusSpectrum":
        """Build from {(j1, j2, k): value} or {k: value} (j' = 0) dictionaries."""
        out = cls.zeros(J, K)
        for key, val in modes.items():
            j1, j2, k = (0, 0, key) if np.isscalar(key) else key
            out.coeffs[j1 + J, j2 + J, k + K] = val
        return out

    @classmethod
    def cos_theta(cls, J: int, K: int, amplitude: float = 1.0) -> "TorusSpectrum":
        return cls.from_modes({1: amplitude / 2, -1: amplitude / 2}, J, K)

    @classmethod
    def from_samples(cls, values: np.ndarray, J: int, K: int) -> "TorusSpectrum":
        """Project samples on a uniform (n1, n2, n3) grid of T^3 onto the truncation."""
        n1, n2, n3 = values.shape
        hat = np.fft.fftn(values) / (n1 * n2 * n3)
        out = cls.zeros(J, K)
        for j1 in range(-J, J + 1):
            for j2 in range(-J, J + 1):
                for k in range(-K, K + 1):
                    out.coeffs[j1 + J, j2 + J, k + K] = hat[j1 % n1, j2 % n2, k % n3]
        return out

    def copy(self) -> "TorusSpectrum":
        return TorusSpectrum(self.coeffs.copy(), self.J, self.K)

    def __add__(self, other):
        _check_same(self, other)
        return TorusSpectrum(self.coeffs + other.coeffs, self.J, self.K)

    def __sub__(self, other):
        _check_same(self, other)
        return TorusSpectrum(self.coeffs - other.coeffs, self.J, self.K)

    def __mul__(self, scalar):
        return TorusSpectrum(self.coeffs * scalar, self.J, self.K)

    __rmul__ = __mul__

    def mode(self, j1: int, j2: int, k: int) -> complex:
        if max(abs(j1), abs(j2)) > self.J or abs(k) > self.K:
            return 0.0j
        return self.coeffs[j1 + self.J, j2 + self.J, k + self.K]

    def k_values(self) -> np.ndarray:
        return np.arange(-self.K, self.K + 1)

    def j_values(self) -> np.ndarray:
        return np.arange(-self.J, self.J + 1)

    def reality_defect(self) -> float:
        mirrored = np.conj(self.coeffs[::-1, ::-1, ::-1])
        return float(np.max(np.abs(self.coeffs - mirrored)))

    def symmetrize(self) -> "TorusSpectrum":
        """Enforce psi_hat(-j', -k) = conj psi_hat(j', k) by averaging."""
        c = 0.5 * (self.coeffs + np.conj(self.coeffs[::-1, ::-1, ::-1]))
        return TorusSpectrum(c, self.J, self.K)

    def is_sharp(self) -> bool:
        return bool(np.all(self.coeffs[:, :, self.K] == 0))

    def sharpen(self) -> "TorusSpectrum":
        c = self.coeffs.copy()
        c[:, :, self.K] = 0.0
        return TorusSpectrum(c, self.J, self.K)

    def evaluate(self, y1, y2, theta) -> np.ndarray:
        """Evaluate the (real) function at broadcastable points."""
        y1, y2, theta = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (y1, y2, theta)))
        js, ks = self.j_values(), self.k_values()
        e1 = np.exp(1j * y1[..., None] * js)
        e2 = np.exp(1j * y2[..., None] * js)
        e3 = np.exp(1j * theta[..., None] * ks)
        val = np.einsum("abk,...a,...b,...k->...", self.coeffs, e1, e2, e3)
        return val.real

    def tail_ratio(self) -> float:
        k = np.abs(self.k_values())
        energy = np.sum(np.abs(self.coeffs) ** 2)
        if energy == 0:
            return 0.0
        return float(np.sum(np.abs(self.coeffs[:, :, k > self.K / 2]) ** 2) / energy)


def _check_same(a: TorusSpectrum, b: TorusSpectrum):
    if a.J != b.J or a.K != b.K:
        raise TruncationMismatch(f"truncations differ: ({a.J},{a.K}) vs ({b.J},{b.K})")


# ------------------------------------------------------------------ kernel

def kernel_lambda(k1: int, k2: int, allow_zero_sum: bool = False) -> float:
    """Lambda(k1, k2) = |k1||k2||k1+k2| / (|k1|+|k2|+|k1+k2|)."""
    k3 = k1 + k2
    if k3 == 0:
        if allow_zero_sum:
            return 0.0
        raise ResonantZeroSum("Lambda is not needed for k1 + k2 = 0")
    den = abs(k1) + abs(k2) + abs(k3)
    return abs(k1) * abs(k2) * abs(k3) / den


@lru_cache(maxsize=64)
def kernel_table(K: int) -> np.ndarray:
    """Tabulated Lambda on [-K, K]^2, indexed [k1 + K, k2 + K]; zero on k1 + k2 = 0."""
    ks = np.arange(-K, K + 1)
    k1, k2 = np.meshgrid(ks, ks, indexing="ij")
    k3 = k1 + k2
    den = np.abs(k1) + np.abs(k2) + np.abs(k3)
    with np.errstate(invalid="ignore", divide="ignore"):
        table = np.where(den > 0, np.abs(k1 * k2 * k3) / np.where(den > 0, den, 1), 0.0)
    table[k3 == 0] = 0.0
    table.setflags(write=False)
    return table


@lru_cache(maxsize=64)
def _pair_structure(K: int):
    """Pairs (k1, k2) with |k1+k2| <= K, k1 + k2 != 0, and the incidence matrix onto k."""
    ks = np.arange(-K, K + 1)
    k1, k2 = np.meshgrid(ks, ks, indexing="ij")
    keep = (np.abs(k1 + k2) <= K) & (k1 + k2 != 0) & (k1 != 0) & (k2 != 0)
    i1, i2 = k1[keep] + K, k2[keep] + K
    weights = kernel_table(K)[i1, i2]
    incidence = np.zeros((i1.size, 2 * K + 1))
    incidence[np.arange(i1.size), (k1 + k2)[keep] + K] = 1.0
    return i1, i2, weights, incidence


def bilinear_b(phi: TorusSpectrum, psi: TorusSpectrum) -> TorusSpectrum:
    """B(phi, psi)(j', k) = sum Lambda(k1, k2) phi_hat(j'1, k1) psi_hat(j'2, k2), k != 0.

    Both convolutions (in k and in j') are exact truncated double sums; modes
    falling outside the truncation are discarded.
    """
    _check_same(phi, psi)
    J, K = phi.J, phi.K
    i1, i2, w, incidence = _pair_structure(K)
    n = 2 * J + 1
    acc = np.zeros((n, n, i1.size), dtype=complex)
    wphi = w * phi.coeffs[:, :, i1]
    for b1 in range(-J, J + 1):
        for b2 in range(-J, J + 1):
            partner = psi.coeffs[b1 + J, b2 + J, i2]
            if not np.any(partner):
                continue
            # output j = a + b with a = j - b inside the truncation
            lo1, hi1 = max(0, b1), min(n, n + b1)
            lo2, hi2 = max(0, b2), min(n, n + b2)
            acc[lo1:hi1, lo2:hi2] += wphi[lo1 - b1:hi1 - b1, lo2 - b2:hi2 - b2] * partner
    out = acc @ incidence
    out = np.array(out, dtype=complex)
    out[:, :, K] = 0.0
    return TorusSpectrum(out, J, K).symmetrize()


def bilinear_b_bruteforce(phi: TorusSpectrum, psi: TorusSpectrum) -> TorusSpectrum:
    """Reference implementation of bilinear_b by explicit double sums.

    Loops over every pair of tangential modes and, for each pair, forms the full
    (k1, k2) table of products before summing along the diagonals k1 + k2 = k.
    """
    _check_same(phi, psi)
    J, K = phi.J, phi.K
    out = TorusSpectrum.zeros(J, K)
    ks = np.arange(-K, K + 1)
    lam = np.array([[kernel_lambda(k1, k2, allow_zero_sum=True) for k2 in ks] for k1 in ks])
    ksum = (ks[:, None] + ks[None, :]).ravel()
    keep = (np.abs(ksum) <= K) & (ksum != 0)
    rng = range(-J, J + 1)
    for a1 in rng:
        for a2 in rng:
            for b1 in rng:
                for b2 in rng:
                    j1, j2 = a1 + b1, a2 + b2
                    if max(abs(j1), abs(j2)) > J:
                        continue
                    table = (lam * np.outer(phi.coeffs[a1 + J, a2 + J], psi.coeffs[b1 + J, b2 + J])).ravel()
                    acc = np.zeros(2 * K + 1, dtype=complex)
                    np.add.at(acc, ksum[keep] + K, table[keep])
                    out.coeffs[j1 + J, j2 + J] += acc
    return out


# ------------------------------------------------------------------ equation

def _transport_symbol(config: FrequencyConfig, J: int) -> np.ndarray:
    """-i v.j' on the (j1, j2) grid."""
    js = np.arange(-J, J + 1)
    v1, v2 = config.group_velocity
    return -1j * (v1 * js[:, None] + v2 * js[None, :])


def _sign_k(K: int) -> np.ndarray:
    return np.sign(np.arange(-K, K + 1)).astype(float)


def hj_rhs(psi: TorusSpectrum, config: FrequencyConfig) -> TorusSpectrum:
    """Right-hand side of d/dt psi_hat = -v.(i j') psi_hat + nl i sgn(k) B(psi, psi)."""
    if not psi.is_sharp():
        raise NotSharp("the amplitude equation only evolves oscillating modes")
    return _nonlinear_rhs(psi.coeffs, psi.J, psi.K, config)


def _nonlinear_rhs(coeffs, J, K, config, partner=None, factor=1.0):
    """Shared RHS: transport of `coeffs` plus factor * nl i sgn(k) B(partner, coeffs)."""
    spec = TorusSpectrum(coeffs, J, K)
    other = spec if partner is None else partner
    b = bilinear_b(other, spec).coeffs
    out = _transport_symbol(config, J)[:, :, None] * coeffs
    out = out + factor * config.nonlinear_coeff * 1j * _sign_k(K) * b
    out[:, :, K] = 0.0
    return TorusSpectrum(out, J, K)


@dataclass
class Trajectory:
    """Time samples of a TorusSpectrum on a uniform grid."""
    times: np.ndarray
    coeffs: np.ndarray   # shape (nt, 2J+1, 2J+1, 2K+1)
    J: int
    K: int
    dt: float

    def __len__(self):
        return len(self.times)

    def state(self, n: int) -> TorusSpectrum:
        return TorusSpectrum(self.coeffs[n], self.J, self.K)

    def final(self) -> TorusSpectrum:
        return self.state(len(self.times) - 1)

    def index_of(self, t: float) -> int:
        n = int(round(t / self.dt))
        if not (0 <= n < len(self.times)) or abs(self.times[n] - t) > 1e-9 * max(1.0, abs(t)):
            raise GridMismatch(f"time {t} is not on the trajectory grid")
        return n


def _step_count(dt: float, t_final: float) -> int:
    if dt <= 0:
        raise ValueError("dt must be positive")
    n = int(round(t_final / dt))
    if n < 0 or abs(n * dt - t_final) > 1e-9 * max(1.0, t_final):
        raise GridMismatch(f"t_final={t_final} is not a multiple of dt={dt}")
    return n


def default_dt(config: FrequencyConfig, K: int) -> float:
    return 0.1 / (abs(config.nonlinear_coeff) * K * K)


def hj_solve(psi0: TorusSpectrum, config: FrequencyConfig, dt: float | None, t_final: float,
             blowup_threshold: float = 1e-3) -> Trajectory:
    """Classical RK4 for the amplitude equation with reality/sharpness enforcement."""
    if not psi0.is_sharp():
        raise NotSharp("initial front must have zero fast mean")
    J, K = psi0.J, psi0.K
    dt = default_dt(config, K) if dt is None else dt
    n = _step_count(dt, t_final)
    out = np.empty((n + 1,) + psi0.coeffs.shape, dtype=complex)
    y = psi0.symmetrize().coeffs
    out[0] = y

    def f(c):
        return _nonlinear_rhs(c, J, K, config).coeffs

    for i in range(n):
        k1 = f(y)
        k2 = f(y + 0.5 * dt * k1)
        k3 = f(y + 0.5 * dt * k2)
        k4 = f(y + dt * k3)
        y = y + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        state = TorusSpectrum(y, J, K).symmetrize().sharpen()
        ratio = state.tail_ratio()
        if ratio > blowup_threshold:
            raise BlowupDetected(f"spectral tail ratio {ratio:.3e} at t={(i + 1) * dt:.6g}")
        y = state.coeffs
        out[i + 1] = y
    return Trajectory(np.arange(n + 1) * dt, out, J, K, dt)


def hermite_midpoint(traj: Trajectory, n: int, config: FrequencyConfig) -> np.ndarray:
    """Cubic Hermite value of the amplitude trajectory at t_n + dt/2 (O(dt^4))."""
    a, b = traj.coeffs[n], traj.coeffs[n + 1]
    da = _nonlinear_rhs(a, traj.J, traj.K, config).coeffs
    db = _nonlinear_rhs(b, traj.J, traj.K, config).coeffs
    return 0.5 * (a + b) + traj.dt * (da - db) / 8.0


def _source_sampler(source, traj: Trajectory):
    """Return g(n, stage) giving source coefficients at t_n + stage*dt/2 (stage in 0,1,2)."""
    if source is None:
        return lambda n, stage: 0.0
    if callable(source):
        return lambda n, stage: _coeffs_of(source(traj.times[n] + 0.5 * stage * traj.dt))
    arr = np.asarray(source, dtype=complex)
    if arr.shape[0] != len(traj.times):
        raise GridMismatch("sampled source must live on the trajectory grid")
    nt = arr.shape[0]

    def sample(n, stage):
        if stage == 0:
            return arr[n]
        if stage == 2:
            return arr[n + 1]
        if nt < 4:
            return 0.5 * (arr[n] + arr[n + 1])
        lo = min(max(n - 1, 0), nt - 4)
        nodes = np.arange(lo, lo + 4)
        x = n + 0.5
        w = np.array([np.prod([(x - nodes[j]) / (nodes[i] - nodes[j]) for j in range(4) if j != i])
                      for i in range(4)])
        return np.tensordot(w, arr[nodes], axes=1)

    return sample


def _coeffs_of(s):
    return s.coeffs if isinstance(s, TorusSpectrum) else np.asarray(s, dtype=complex)


def hj_linearized_solve(psi2: Trajectory, source, psi_init: TorusSpectrum, config: FrequencyConfig,
                        dt: float, t_final: float) -> Trajectory:
    """RK4 for d/dt phi + v.grad phi - 2 nl i sgn(k) B(psi2, phi) = source.

    `source` is None, a callable t -> TorusSpectrum, or an array sampled on the
    grid of `psi2` (values at half steps are then cubic interpolants).  The
    amplitude at half steps is the cubic Hermite interpolant built from hj_rhs.
    """
    if psi_init.J != psi2.J or psi_init.K != psi2.K:
        raise GridMismatch("truncations of psi2 and the initial datum differ")
    if abs(dt - psi2.dt) > 1e-12 * dt:
        raise GridMismatch("dt must match the amplitude trajectory")
    n = _step_count(dt, t_final)
    if n > len(psi2.times) - 1:
        raise GridMismatch("t_final exceeds the amplitude trajectory")
    J, K = psi2.J, psi2.K
    src = _source_sampler(source, psi2)

    def f(c, base, forcing):
        out = _nonlinear_rhs(c, J, K, config, partner=TorusSpectrum(base, J, K), factor=2.0).coeffs
        out = out + forcing
        out[:, :, K] = 0.0
        return out

    out = np.empty((n + 1,) + psi_init.coeffs.shape, dtype=complex)
    y = psi_init.symmetrize().sharpen().coeffs
    out[0] = y
    for i in range(n):
        p0, p2 = psi2.coeffs[i], psi2.coeffs[i + 1]
        p1 = hermite_midpoint(psi2, i, config)
        s0, s1, s2 = src(i, 0), src(i, 1), src(i, 2)
        k1 = f(y, p0, s0)
        k2 = f(y + 0.5 * dt * k1, p1, s1)
        k3 = f(y + 0.5 * dt * k2, p1, s1)
        k4 = f(y + dt * k3, p2, s2)
        y = y + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        y = TorusSpectrum(y, J, K).symmetrize().sharpen().coeffs
        out[i + 1] = y
    return Trajectory(np.arange(n + 1) * dt, out, J, K, dt)


def time_derivatives(psi: TorusSpectrum, config: FrequencyConfig, order: int = 2) -> list:
    """Exact time derivatives d^n psi/dt^n (n = 0..order) along the Galerkin flow.

    Uses Leibniz' rule on the quadratic right-hand side, so the results are the
    derivatives of the semi-discrete (Galerkin) solution through psi.
    """
    J, K = psi.J, psi.K
    sym = _transport_symbol(config, J)[:, :, None]
    sg = config.nonlinear_coeff * 1j * _sign_k(K)
    derivs = [psi.coeffs]
    from math import comb
    for n in range(order):
        quad = 0
        for i in range(n + 1):
            quad = quad + comb(n, i) * bilinear_b(TorusSpectrum(derivs[i], J, K),
                                                  TorusSpectrum(derivs[n - i], J, K)).coeffs
        nxt = sym * derivs[n] + sg * quad
        nxt[:, :, K] = 0.0
        derivs.append(nxt)
    return [TorusSpectrum(d, J, K) for d in derivs]
