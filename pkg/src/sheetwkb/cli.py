"""Command line interface: configuration parsing, verification suites and data export.

Configuration files are flat ``key = value`` text; arrays use ``[a, b, c]``
and ``#`` starts a comment.  Every emitted file starts with a manifest line
carrying the SHA-256 hash of the canonical configuration, and floats are
written with 17 significant digits, so reruns with the same configuration are
byte-identical.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .amplitude import TorusSpectrum, bilinear_b, bilinear_b_bruteforce, hj_solve
from .combinatorics import (CutoffFunction, check_length_dependence, leibniz_identity_check,
                            q_sharp_vanishing)
from .errors import ParseError, SheetWKBError, SuiteFailed
from .fast_solver import (FastSolution, apply_operator, kernel_defect, random_fast_solution,
                          solvability_check, solve_fast_problem)
from .mhd_algebra import ReferenceSheet, hermitian_identity_suite, validate_assumptions
from . import wkb

FLOAT_FMT = ".17g"

DEFAULTS = {
    "u_plus": [1.0, 0.0, 0.0],
    "u_minus": [-1.0, 0.0, 0.0],
    "h_plus": [3.0, 0.0, 0.0],
    "h_minus": [0.0, 3.0, 0.0],
    "p": 1,
    "q": 0,
    "root_choice": "plus",
    "J": 0,
    "K": 8,
    "dt": 0.005,
    "t_final": 0.2,
    "order": 1,
    "eps_ladder": [4, 8, 16, 32, 64],
    "seed": 0,
    "samples": 10000,
    "stride": 4,
    "tol": 1e-9,
    "suite": "all",
    "threads": 1,
    "out": "out",
}
ARRAY_KEYS = {"u_plus", "u_minus", "h_plus", "h_minus", "eps_ladder"}
INT_KEYS = {"p", "q", "J", "K", "order", "seed", "samples", "stride", "threads"}
FLOAT_KEYS = {"dt", "t_final", "tol"}
STR_KEYS = {"root_choice", "suite", "out"}


def fmt(x) -> str:
    return format(float(x), FLOAT_FMT)


# ------------------------------------------------------------ configuration

def _parse_scalar(key: str, text: str, lineno: int):
    try:
        if key in INT_KEYS:
            return int(text)
        if key in FLOAT_KEYS:
            return float(text)
    except ValueError:
        raise ParseError(f"line {lineno}: cannot parse {key} = {text!r}") from None
    return text


def parse_config_text(text: str) -> dict:
    """Parse flat key = value text (unknown keys and malformed lines raise ParseError)."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ParseError(f"line {lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in DEFAULTS:
            raise ParseError(f"line {lineno}: unknown key {key!r}")
        if key in ARRAY_KEYS:
            if not (value.startswith("[") and value.endswith("]")):
                raise ParseError(f"line {lineno}: {key} needs array syntax [a, b, ...]")
            items = [s.strip() for s in value[1:-1].split(",") if s.strip()]
            try:
                conv = int if key == "eps_ladder" else float
                out[key] = [conv(s) for s in items]
            except ValueError:
                raise ParseError(f"line {lineno}: cannot parse array {value!r}") from None
        else:
            out[key] = _parse_scalar(key, value, lineno)
    return out


@dataclass
class RunConfig:
    values: dict = field(default_factory=lambda: dict(DEFAULTS))

    @classmethod
    def load(cls, path: str | None, overrides: dict | None = None) -> "RunConfig":
        vals = dict(DEFAULTS)
        if path is not None:
            try:
                text = Path(path).read_text()
            except OSError as exc:
                raise ParseError(f"cannot read {path}: {exc}") from None
            vals.update(parse_config_text(text))
        for key, val in (overrides or {}).items():
            if val is not None:
                vals[key] = val
        for key in ("u_plus", "u_minus", "h_plus", "h_minus"):
            if len(vals[key]) not in (2, 3):
                raise ParseError(f"{key} must have 2 or 3 components")
        return cls(vals)

    def __getitem__(self, key):
        return self.values[key]

    def canonical(self) -> str:
        """Canonical text used for hashing (sorted keys, 17-digit floats, output path excluded)."""
        lines = []
        for key in sorted(k for k in self.values if k != "out"):
            val = self.values[key]
            if isinstance(val, list):
                txt = "[" + ", ".join(fmt(v) if isinstance(v, float) else str(v) for v in val) + "]"
            elif isinstance(val, float):
                txt = fmt(val)
            else:
                txt = str(val)
            lines.append(f"{key} = {txt}")
        return "\n".join(lines) + "\n"

    @property
    def digest(self) -> str:
        return hashlib.sha256(self.canonical().encode()).hexdigest()

    def manifest_line(self, command: str) -> str:
        return f"# sheetwkb {__version__} {command} config-sha256={self.digest}"

    def sheet(self) -> ReferenceSheet:
        v = self.values
        return ReferenceSheet(tuple(v["u_plus"]), tuple(v["u_minus"]),
                              tuple(v["h_plus"]), tuple(v["h_minus"]))

    def frequency(self):
        v = self.values
        return validate_assumptions(self.sheet(), v["p"], v["q"], v["root_choice"])


# ------------------------------------------------------------ output helpers

def _write(path: Path, manifest: str, lines: list):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(manifest + "\n" + "\n".join(lines) + "\n")


def _json_dump(path: Path, manifest: str, payload: dict):
    data = {"manifest": manifest, **payload}
    _write(path, manifest, [json.dumps(_jsonable(data), indent=2, sort_keys=True)])


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return float(fmt(obj))
    if isinstance(obj, complex):
        return [float(fmt(obj.real)), float(fmt(obj.imag))]
    return obj


# ------------------------------------------------------------ commands

def assumption_report(cfg: RunConfig) -> dict:
    """Evaluate the stability, direction, root and sum assumptions without raising."""
    sheet = cfg.sheet()
    v = cfg.values
    norm = float(np.hypot(v["p"], v["q"]))
    xi = np.array([v["p"], v["q"]]) / norm if norm else np.zeros(2)
    a = {s: float(xi @ sheet.velocity(s)[:2]) for s in (1, -1)}
    b = {s: float(xi @ sheet.field(s)[:2]) for s in (1, -1)}
    ssum = a[1] + a[-1]
    disc = ssum ** 2 - 2 * (a[1] ** 2 + a[-1] ** 2 - b[1] ** 2 - b[-1] ** 2)
    roots = [(-ssum + np.sqrt(disc)) / 2, (-ssum - np.sqrt(disc)) / 2] if disc >= 0 else []
    return {"stability_margin": sheet.stability_margin(),
            "direction_gap": [abs(abs(a[1] - a[-1]) - abs(b[1] - b[-1])),
                              abs(abs(a[1] - a[-1]) - abs(b[1] + b[-1]))],
            "discriminant": disc, "tau_roots": roots}


def cmd_check(cfg: RunConfig, out=None) -> int:
    out = sys.stdout if out is None else out
    manifest = cfg.manifest_line("check")
    print(manifest, file=out)
    rep = assumption_report(cfg)
    print(f"stability_margin = {fmt(rep['stability_margin'])}", file=out)
    print(f"direction_gap = [{', '.join(fmt(x) for x in rep['direction_gap'])}]", file=out)
    print(f"lopatinskii_discriminant = {fmt(rep['discriminant'])}", file=out)
    print(f"tau_roots = [{', '.join(fmt(x) for x in rep['tau_roots'])}]", file=out)
    try:
        fc = cfg.frequency()
    except SheetWKBError as exc:
        print(f"admissible = false ({type(exc).__name__}: {exc})", file=out)
        return 2
    print(f"tau = {fmt(fc.tau)}", file=out)
    for name in ("a", "b", "c", "ell1", "ell2"):
        d = getattr(fc, name)
        print(f"{name} = [{fmt(d[1])}, {fmt(d[-1])}]", file=out)
    h4 = fc.c[1] ** 2 + fc.c[-1] ** 2 - fc.b[1] ** 2 - fc.b[-1] ** 2
    print(f"sum_defect = {fmt(h4)}", file=out)
    print(f"group_velocity = [{fmt(fc.group_velocity[0])}, {fmt(fc.group_velocity[1])}]", file=out)
    print(f"nonlinear_coeff = {fmt(fc.nonlinear_coeff)}", file=out)
    suite = hermitian_identity_suite(fc, modes=tuple(k for k in range(-8, 9) if k))
    print(f"identity_max_deviation = {fmt(suite['max_deviation'])}", file=out)
    print("admissible = true", file=out)
    return 0


def _suite_algebra(fc, tol):
    rep = hermitian_identity_suite(fc, modes=tuple(k for k in range(-8, 9) if k), tol=1e-12)
    return {"max_deviation": rep["max_deviation"]}


def _suite_combinatorics(fc, tol):
    chi = CutoffFunction.polynomial([1, 0, -3, 2])
    return {"leibniz": leibniz_identity_check(8, chi),
            "q_sharp": q_sharp_vanishing(8, trials=100, seed=0),
            "length_dependence": check_length_dependence(6, chi)}


def _suite_amplitude(fc, tol, seed):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(3):
        c = rng.normal(size=(5, 5, 17)) + 1j * rng.normal(size=(5, 5, 17))
        a = TorusSpectrum(c, 2, 8).symmetrize().sharpen()
        c = rng.normal(size=(5, 5, 17)) + 1j * rng.normal(size=(5, 5, 17))
        b = TorusSpectrum(c, 2, 8).symmetrize().sharpen()
        diff = bilinear_b(a, b).coeffs - bilinear_b_bruteforce(a, b).coeffs
        worst = max(worst, float(np.max(np.abs(diff))))
    return {"bilinear_max_deviation": worst}


def _suite_fast(fc, tol, seed):
    worst = 0.0
    for i in range(5):
        sol = random_fast_solution(fc, seed + i)
        src = apply_operator(sol, fc)
        rec = solve_fast_problem(src, fc)
        # reconstruction agrees with the synthetic solution up to the kernel
        diff = {s: {k: sol.U[s][k] - rec.U[s].get(k, sol.U[s][k].scale(0.0))
                    for k in sol.U[s]} for s in (1, -1)}
        worst = max(worst, kernel_defect(FastSolution(diff, {}, None), fc))
        worst = max(worst, max(solvability_check(src, fc).deviations.values()))
    return {"max_deviation": worst}


def _suite_wkb(fc, tol):
    traj = hj_solve(TorusSpectrum.cos_theta(0, 16), fc, 0.002, 0.1)
    jet = wkb.jet_from_trajectory(traj, 25, fc)
    rep = wkb.first_order_check(jet, fc)
    return {"first_order_conditions": rep.deviations}


def cmd_verify(cfg: RunConfig, suite: str, out=None) -> int:
    out = sys.stdout if out is None else out
    manifest = cfg.manifest_line("verify")
    fc = cfg.frequency()
    seed = cfg["seed"]
    suites = {"algebra": lambda: _suite_algebra(fc, cfg["tol"]),
              "combinatorics": lambda: _suite_combinatorics(fc, cfg["tol"]),
              "amplitude": lambda: _suite_amplitude(fc, cfg["tol"], seed),
              "fast": lambda: _suite_fast(fc, cfg["tol"], seed),
              "wkb": lambda: _suite_wkb(fc, cfg["tol"])}
    names = list(suites) if suite == "all" else [suite]
    if any(n not in suites for n in names):
        raise ParseError(f"unknown suite {suite!r}")
    report, failed = {}, []
    limits = {"algebra": 1e-12, "amplitude": 1e-12, "fast": 1e-8, "wkb": 1e-7}
    for name in names:
        try:
            res = suites[name]()
        except SheetWKBError as exc:
            report[name] = {"error": f"{type(exc).__name__}: {exc}"}
            failed.append(name)
            continue
        report[name] = res
        vals = []
        for v in res.values():
            vals.extend(v.values() if isinstance(v, dict) else [v])
        if name == "combinatorics":
            ok = all(bool(v) for v in vals)
        else:
            ok = max(float(v) for v in vals) < limits[name]
        res["passed"] = ok
        if not ok:
            failed.append(name)
    text = json.dumps(_jsonable({"manifest": manifest, "suites": report}), indent=2, sort_keys=True)
    print(text, file=out)
    if failed:
        raise SuiteFailed(f"suites failed: {failed}")
    return 0


def _trajectory(cfg: RunConfig, fc):
    psi0 = TorusSpectrum.cos_theta(cfg["J"], cfg["K"])
    return hj_solve(psi0, fc, cfg["dt"], cfg["t_final"])


def _spectrum_rows(traj) -> list:
    rows = ["t,j1,j2,k,re,im"]
    J, K = traj.J, traj.K
    for n, t in enumerate(traj.times):
        c = traj.coeffs[n]
        for a in range(2 * J + 1):
            for b in range(2 * J + 1):
                for i in range(2 * K + 1):
                    v = c[a, b, i]
                    rows.append(f"{fmt(t)},{a - J},{b - J},{i - K},{fmt(v.real)},{fmt(v.imag)}")
    return rows


def cmd_amplitude(cfg: RunConfig, out_dir: Path) -> int:
    manifest = cfg.manifest_line("amplitude")
    fc = cfg.frequency()
    traj = _trajectory(cfg, fc)
    _write(out_dir / "amplitude_spectrum.csv", manifest, _spectrum_rows(traj))
    plot = ["# columns: t energy theta_derivative_bound tail_ratio"]
    for n, t in enumerate(traj.times):
        s = traj.state(n)
        energy = float(np.sum(np.abs(s.coeffs) ** 2))
        slope = float(np.sum(np.abs(s.coeffs * s.k_values()[None, None, :])))
        plot.append(f"{fmt(t)} {fmt(energy)} {fmt(slope)} {fmt(s.tail_ratio())}")
    _write(out_dir / "amplitude_plot.dat", manifest, plot)
    _json_dump(out_dir / "amplitude_manifest.json", manifest,
               {"J": traj.J, "K": traj.K, "dt": traj.dt, "t_final": float(traj.times[-1]),
                "tau": fc.tau, "nonlinear_coeff": fc.nonlinear_coeff,
                "group_velocity": list(fc.group_velocity)})
    return 0


def cmd_profiles(cfg: RunConfig, out_dir: Path) -> int:
    manifest = cfg.manifest_line("profiles")
    fc = cfg.frequency()
    traj = _trajectory(cfg, fc)
    cor = wkb.first_corrector(traj, fc, stride=cfg["stride"])
    _write(out_dir / "psi3_spectrum.csv", manifest, _spectrum_rows(cor.psi3))
    n = len(traj.times) - 1
    h = cor.hierarchy(n)
    Y3 = np.linspace(0.0, 6.0, 61)
    plot = ["# columns: Y3 side |u3_1| |q_1| |u3_2| |q_2|  (theta = y' = 0, y3 = 0, final time)"]
    for s in (1, -1):
        Ys = s * Y3
        zeros = np.zeros_like(Ys)
        v1 = h.U1[s].evaluate(zeros, zeros, zeros, Ys, zeros, h.cutoff).real
        v2 = h.U2[s].evaluate(zeros, zeros, zeros, Ys, zeros, h.cutoff).real
        for i, y in enumerate(Ys):
            plot.append(f"{fmt(y)} {s} {fmt(v1[i, 2])} {fmt(v1[i, 6])} {fmt(v2[i, 2])} {fmt(v2[i, 6])}")
    _write(out_dir / "profiles_plot.dat", manifest, plot)
    rect = wkb.rectification_report(h)
    _json_dump(out_dir / "profiles_report.json", manifest,
               {"rectification": rect, "corrector": h.corrector_diagnostics(),
                "psi3_max": float(np.max(np.abs(cor.psi3.coeffs)))})
    return 0


def cmd_residuals(cfg: RunConfig, out_dir: Path) -> int:
    manifest = cfg.manifest_line("residuals")
    fc = cfg.frequency()
    traj = _trajectory(cfg, fc)
    order = cfg["order"]
    cor = wkb.first_corrector(traj, fc, stride=cfg["stride"]) if order == 2 else None
    tab = wkb.residual_study(order, traj, fc, ladder=tuple(cfg["eps_ladder"]),
                             counts=cfg["samples"], seed=cfg["seed"], corrector=cor)
    rows = ["eps,residual_name,sup_value"]
    rows += [f"{fmt(r['eps'])},{r['name']},{fmt(r['sup'])}" for r in tab.rows]
    _write(out_dir / f"residuals_M{order}.csv", manifest, rows)
    _json_dump(out_dir / f"residual_slopes_M{order}.json", manifest,
               {"order": order, "eps": tab.eps, "slopes": tab.slopes})
    return 0


# ------------------------------------------------------------ entry point

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sheetwkb", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("check", "verify", "amplitude", "profiles", "residuals"):
        p = sub.add_parser(name)
        p.add_argument("--config", default=None)
        p.add_argument("--out", default=None)
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--modes", type=int, default=None, help="fast truncation K")
        p.add_argument("--tangential-modes", type=int, default=None, help="tangential truncation J")
        p.add_argument("--dt", type=float, default=None)
        p.add_argument("--t-final", type=float, default=None)
        p.add_argument("--order", type=int, default=None)
        p.add_argument("--eps-ladder", default=None, help="comma separated ladder indices")
        p.add_argument("--threads", type=int, default=None,
                       help="recorded in the manifest; computations are sequential")
        if name == "verify":
            p.add_argument("--suite", default=None,
                           choices=["algebra", "combinatorics", "amplitude", "fast", "wkb", "all"])
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    ladder = None
    if args.eps_ladder is not None:
        try:
            ladder = [int(s) for s in args.eps_ladder.split(",") if s.strip()]
        except ValueError:
            print("ParseError: --eps-ladder expects integers", file=sys.stderr)
            return 2
    overrides = {"seed": args.seed, "K": args.modes, "J": args.tangential_modes, "dt": args.dt,
                 "t_final": args.t_final, "order": args.order, "eps_ladder": ladder,
                 "threads": args.threads, "out": args.out,
                 "suite": getattr(args, "suite", None)}
    try:
        cfg = RunConfig.load(args.config, overrides)
        if args.command == "check":
            return cmd_check(cfg)
        if args.command == "verify":
            return cmd_verify(cfg, cfg["suite"])
        out_dir = Path(cfg["out"])
        return {"amplitude": cmd_amplitude, "profiles": cmd_profiles,
                "residuals": cmd_residuals}[args.command](cfg, out_dir)
    except SheetWKBError as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
