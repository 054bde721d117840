"""Command-line front end for the risk-shifting solvers.

    riskshift calibrate [--out DIR] [--mc-check]
    riskshift table1 [--beta 30] [--w0 1.34]
    riskshift scan [--beta 10,30,130] --out DIR
    riskshift solve {pc,mo,rs,reg} [--measure es --q 0.9] [--gamma-sh G | --gamma-ph G]

Exit codes: 0 success, 2 usage, 3 infeasible, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Optional

import numpy as np
from scipy.optimize import brentq

from .calibration import (
    CalibrationError,
    CalibrationInput,
    as_dict,
    calibrate,
    mc_var_check,
    verify_calibration,
)
from .dist import DEFAULT_QUAD, EvaluationError, McConfig
from .numerics import NumericError
from .pareto import (
    DomainError,
    Reservation,
    monopoly_level,
    pareto_dual,
    pareto_primal,
    ph_level_premiums,
    sh_level_premium,
)
from .shifting import (
    Infeasible,
    RiskMeasureSpec,
    alpha_rho,
    regulated_dual,
    regulated_risk_shift,
    regulatory_ok,
    risk_shift,
    risk_shift_dual,
)
from .utilities import (
    EconomicParams,
    Policy,
    certainty_equivalent_of,
    foc_residual,
    mc_utilities,
)

EXIT_OK, EXIT_USAGE, EXIT_INFEASIBLE, EXIT_NUMERIC = 0, 2, 3, 4

RESIDUAL_TOL = 1e-8

# published reference values: alpha, p, U_PH
TABLE1_REFERENCE = {
    "PC": (0.347, 0.883, -1.00e-06),
    "R99": (0.102, 0.893, -1.14e-06),
    "R90": (0.204, 0.890, -1.02e-06),
    "R60": (0.531, 0.869, -1.31e-06),
    "RS": (1.0, 0.824, -4.21e-05),
}

ES_LEVELS = (0.99, 0.90, 0.60)
VAR_LEVEL = 0.995


class UsageError(Exception):
    pass


@dataclass
class RunConfig:
    betas: tuple = (30.0,)
    w0: float = 1.34
    measure: Optional[str] = None
    q: Optional[float] = None
    gamma_sh: Optional[float] = None
    gamma_ph: Optional[float] = None
    alpha_steps: int = 101
    p_min: float = 0.70
    p_max: float = 1.00
    p_steps: int = 121
    output_dir: Optional[Path] = None
    seed: int = 42
    mc_check: bool = False
    mc_samples: int = 1_000_000
    workers: int = 4
    calibration: dict = field(default_factory=dict)

    @property
    def beta(self) -> float:
        return self.betas[0]

    def measures(self) -> list[RiskMeasureSpec]:
        if self.measure is None:
            return [RiskMeasureSpec("VaR", VAR_LEVEL)] + [RiskMeasureSpec("ES", q) for q in ES_LEVELS]
        q = self.q if self.q is not None else (VAR_LEVEL if self.measure.lower() == "var" else 0.99)
        return [RiskMeasureSpec(self.measure, q)]

    def validate(self, c0: float):
        if self.alpha_steps < 2 or self.p_steps < 2:
            raise UsageError("grid steps must be at least 2")
        if not self.p_min > -c0 or not self.p_max > self.p_min:
            raise UsageError(f"premium grid must satisfy -c0={-c0!r} < p_min < p_max")
        if not self.w0 == self.w0 or any(not b > 0 for b in self.betas):
            raise UsageError("beta must be positive")


_CONFIG_KEYS = {
    "beta": "betas", "betas": "betas", "w0": "w0", "measure": "measure", "q": "q",
    "gamma_sh": "gamma_sh", "gamma_ph": "gamma_ph", "alpha_steps": "alpha_steps",
    "p_min": "p_min", "p_max": "p_max", "p_steps": "p_steps", "out": "output_dir",
    "output_dir": "output_dir", "seed": "seed", "mc_check": "mc_check",
    "mc_samples": "mc_samples", "workers": "workers",
}
_CALIB_KEYS = {f.name for f in fields(CalibrationInput)}


def _parse_betas(value) -> tuple:
    if isinstance(value, (int, float)):
        return (float(value),)
    if isinstance(value, (list, tuple)):
        return tuple(float(b) for b in value)
    return tuple(float(b) for b in str(value).split(",") if b.strip())


def _coerce(name: str, value):
    if name == "betas":
        return _parse_betas(value)
    if name in ("alpha_steps", "p_steps", "seed", "mc_samples", "workers"):
        return int(value)
    if name == "mc_check":
        return value if isinstance(value, bool) else str(value).strip().lower() in ("1", "true", "yes")
    if name == "output_dir":
        return Path(value)
    if name == "measure":
        return str(value)
    return float(value)


def read_config_file(path: Path) -> dict:
    """Flat ``key = value`` lines (``#`` comments) or a JSON object."""
    text = Path(path).read_text()
    if text.lstrip().startswith("{"):
        data = json.loads(text)
        if not isinstance(data, dict):
            raise UsageError("JSON config must be an object")
        return data
    data = {}
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        sep = "=" if "=" in line else ":" if ":" in line else None
        if sep is None:
            raise UsageError(f"{path}:{n}: expected key = value")
        key, value = (s.strip() for s in line.split(sep, 1))
        data[key] = value
    return data


def build_config(file_values: dict, flag_values: dict) -> RunConfig:
    cfg = RunConfig()
    calib = {}
    for source in (file_values, flag_values):
        for key, value in source.items():
            if value is None:
                continue
            key = key.replace("-", "_")
            name = key.split(".", 1)[1] if key.startswith("calibration.") else key
            if name in _CALIB_KEYS:
                calib[name] = value
            elif key in _CONFIG_KEYS:
                try:
                    setattr(cfg, _CONFIG_KEYS[key], _coerce(_CONFIG_KEYS[key], value))
                except (TypeError, ValueError) as exc:
                    raise UsageError(f"bad value for {key}: {value!r}") from exc
            else:
                raise UsageError(f"unknown config key {key!r}")
    cfg.calibration = calib
    return cfg


# --------------------------------------------------------------------------
# output helpers


def fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return format(float(x), ".17g")
    return str(x)


def write_csv(path: Path, header: list, rows: list):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([fmt(v) for v in row])
    path.write_bytes(buf.getvalue().encode())


def kv_text(items: list) -> str:
    return "".join(f"{k} = {fmt(v)}\n" for k, v in items)


def _emit(text: str, cfg: RunConfig, name: str):
    sys.stdout.write(text)
    if cfg.output_dir is not None:
        cfg.output_dir.mkdir(parents=True, exist_ok=True)
        (cfg.output_dir / name).write_bytes(text.encode())


def _calibrated(cfg: RunConfig):
    out = calibrate(CalibrationInput.from_mapping(cfg.calibration))
    cfg.validate(out.c0)
    return out


def _econ(cfg: RunConfig, out, beta: float) -> EconomicParams:
    return EconomicParams(c0=out.c0, w0=cfg.w0, beta=beta)


def _point_label(spec: RiskMeasureSpec) -> str:
    return f"R{spec.q * 100:g}" if spec.kind == "ES" else f"RVaR{spec.q * 100:g}"


# --------------------------------------------------------------------------
# commands


def cmd_calibrate(cfg: RunConfig) -> int:
    out = _calibrated(cfg)
    report = verify_calibration(out, DEFAULT_QUAD, None)
    res = report["residuals"]
    items = list(as_dict(out).items())
    items.append(("c0_plus_p0", out.c0 + out.p0))
    items.append(("scr_tot_unscaled", out.scr_tot))
    items += [("market_var", report["market_var"]), ("insurance_var", report["insurance_var"]),
              ("mean_R", report["mean_R"]), ("sd_R", report["sd_R"])]
    items += [(f"residual.{k}", v) for k, v in res.items()]
    ok = all(v <= RESIDUAL_TOL for v in res.values())
    if cfg.mc_check:
        chk = mc_var_check(out, McConfig(n_samples=10_000_000, seed=cfg.seed))
        items += [(f"mc_var.{k}", v) for k, v in chk.items()]
        ok = ok and abs(chk["z"]) <= 4.0
    text = "# calibration report\n"
    text += "normalisation: c0 + p0 = 1\n" if res["normalisation"] == 0 else ""
    text += kv_text(items) + f"status = {'ok' if ok else 'FAILED'}\n"
    _emit(text, cfg, "calibration.txt")
    return EXIT_OK if ok else EXIT_NUMERIC


def _table1_rows(cfg: RunConfig, out, econ: EconomicParams):
    res = Reservation("shareholder", cfg.gamma_sh if cfg.gamma_sh is not None else out.c0)
    solvers = [("PC", lambda: pareto_primal(res, econ, out.model))]
    for q in ES_LEVELS:
        spec = RiskMeasureSpec("ES", q)
        solvers.append((_point_label(spec), lambda spec=spec: regulated_risk_shift(res, spec, econ, out.model)))
    solvers.append(("RS", lambda: risk_shift(res, econ, out.model)))
    rows, failed = [], []
    for name, solve in solvers:
        try:
            r = solve()
            pol = r.policy
            rows.append((name, pol.alpha, pol.p, certainty_equivalent_of(pol, econ, out.model),
                         r.utilities.u_ph, "ok"))
        except (DomainError, Infeasible) as exc:
            rows.append((name, None, None, None, None, f"infeasible: {exc}"))
            failed.append(name)
    return rows, failed


def cmd_table1(cfg: RunConfig) -> int:
    out = _calibrated(cfg)
    econ = _econ(cfg, out, cfg.beta)
    rows, failed = _table1_rows(cfg, out, econ)
    header = ["point", "alpha", "p", "CE", "U_PH", "status", "ref_alpha", "ref_p", "ref_U_PH"]
    full = [row + TABLE1_REFERENCE.get(row[0], (None, None, None)) for row in rows]
    lines = [f"{'point':<6}{'alpha':>10}{'p':>10}{'CE':>12}{'U_PH':>13}   "
             f"{'ref alpha':>9}{'ref p':>8}{'ref U_PH':>11}"]
    for name, a, p, ce, u, status, ra, rp, ru in full:
        if status != "ok":
            lines.append(f"{name:<6}{status}")
            continue
        lines.append(f"{name:<6}{a:>10.4f}{p:>10.4f}{ce:>12.6f}{u:>13.3e}   {ra:>9.3f}{rp:>8.3f}{ru:>11.2e}")
    print(f"beta = {fmt(econ.beta)}, w0 = {fmt(econ.w0)}, gamma_SH = {fmt(out.c0 if cfg.gamma_sh is None else cfg.gamma_sh)}")
    print("\n".join(lines))
    if cfg.output_dir is not None:
        cfg.output_dir.mkdir(parents=True, exist_ok=True)
        write_csv(cfg.output_dir / "table1.csv", header, full)
    return EXIT_INFEASIBLE if failed else EXIT_OK


def _parallel_map(fn, items, workers: int):
    if workers <= 1:
        return [fn(i) for i in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def _scan_beta(cfg: RunConfig, out, beta: float, target: Path) -> list[str]:
    econ = _econ(cfg, out, beta)
    m = out.model
    warnings = []
    alphas = np.linspace(0.0, 1.0, cfg.alpha_steps)
    ps = np.linspace(cfg.p_min, cfg.p_max, cfg.p_steps)
    res_sh = Reservation("shareholder", cfg.gamma_sh if cfg.gamma_sh is not None else out.c0)

    # shareholder level curve
    def lc_sh(a):
        try:
            return (a, sh_level_premium(float(a), res_sh, econ, m), res_sh.gamma)
        except (DomainError, NumericError) as exc:
            warnings.append(f"lc_sh alpha={fmt(a)}: {exc}")
            return None
    rows = [r for r in _parallel_map(lc_sh, alphas, cfg.workers) if r is not None]
    write_csv(target / "lc_sh.csv", ["alpha", "p", "gamma_sh"], rows)

    # named points
    points = []
    named = [("PC", lambda: pareto_primal(res_sh, econ, m)),
             ("MO", lambda: pareto_dual(Reservation("policyholder", monopoly_level(econ, m)), econ, m)),
             ("RS", lambda: risk_shift(res_sh, econ, m))]
    for spec in cfg.measures():
        named.append((_point_label(spec), lambda spec=spec: regulated_risk_shift(res_sh, spec, econ, m)))
    var_spec, es_spec = RiskMeasureSpec("VaR", VAR_LEVEL), RiskMeasureSpec("ES", 0.99)
    solved = {}
    for name, solve in named:
        try:
            r = solve()
        except (DomainError, Infeasible, NumericError, EvaluationError) as exc:
            warnings.append(f"point {name}: {exc}")
            continue
        solved[name] = r
        pol = r.policy
        points.append((name, pol.alpha, pol.p, r.utilities.u_sh, r.utilities.u_ph,
                       certainty_equivalent_of(pol, econ, m), r.foc_residual,
                       ";".join(sorted(r.binding)),
                       regulatory_ok(pol, var_spec, econ, m), regulatory_ok(pol, es_spec, econ, m)))
    write_csv(target / "points.csv",
              ["point", "alpha", "p", "u_sh", "u_ph", "ce", "foc_residual", "binding",
               "var99.5_ok", "es99_ok"], points)

    # policyholder level curves through PC and MO
    lc_rows = []
    for name in ("PC", "MO"):
        if name not in solved:
            continue
        gamma = solved[name].utilities.u_ph
        res_ph = Reservation("policyholder", gamma)

        def lc_ph(a, res_ph=res_ph):
            try:
                return ph_level_premiums(float(a), res_ph, econ, m)
            except (DomainError, NumericError) as exc:
                warnings.append(f"lc_ph {name} alpha={fmt(a)}: {exc}")
                return []
        for a, roots in zip(alphas, _parallel_map(lc_ph, alphas, cfg.workers)):
            # a single root lies on the upper branch: U_PH(alpha, -c0) exceeds gamma
            for branch, p in zip(("lower", "upper") if len(roots) == 2 else ("upper",), roots):
                lc_rows.append((name, gamma, a, branch, p))
    write_csv(target / "lc_ph.csv", ["level", "gamma_ph", "alpha", "branch", "p"], lc_rows)

    # contract curve: sign changes of the FOC residual along p per alpha
    def foc_row(a):
        vals = [foc_residual(Policy(float(a), float(p)), econ, m) for p in ps]
        found = []
        if 0.0 < a < 1.0:
            for i in range(len(ps) - 1):
                f0, f1 = vals[i], vals[i + 1]
                if f0 == 0.0:
                    found.append((a, ps[i], 0.0, "interior"))
                elif f0 * f1 < 0:
                    g = lambda p: foc_residual(Policy(float(a), p), econ, m)
                    pz = brentq(g, ps[i], ps[i + 1], xtol=1e-15, rtol=1e-15)
                    found.append((a, pz, g(pz), "interior"))
        else:
            want = (lambda f: f <= 0) if a == 0.0 else (lambda f: f >= 0)
            branch = "alpha0-boundary" if a == 0.0 else "alpha1-boundary"
            found += [(a, p, f, branch) for p, f in zip(ps, vals) if want(f)]
        return found
    foc_rows = [r for rows_a in _parallel_map(foc_row, alphas, cfg.workers) for r in rows_a]
    write_csv(target / "foc.csv", ["alpha", "p", "foc_residual", "branch"], foc_rows)

    # regulatory boundaries
    for kind, fname in (("VaR", "reg_var.csv"), ("ES", "reg_es.csv")):
        specs = [s for s in cfg.measures() if s.kind == kind]
        if not specs:
            specs = [RiskMeasureSpec(kind, VAR_LEVEL if kind == "VaR" else 0.99)]
        reg_rows = []
        for spec in specs:
            def boundary(p, spec=spec):
                try:
                    return alpha_rho(float(p), spec, econ, m)
                except (NumericError, EvaluationError) as exc:
                    warnings.append(f"{spec.label} p={fmt(p)}: {exc}")
                    return None
            for p, a in zip(ps, _parallel_map(boundary, ps, cfg.workers)):
                reg_rows.append((spec.kind, spec.q, p, a, a is not None))
        write_csv(target / fname, ["measure", "q", "p", "alpha_rho", "feasible"], reg_rows)

    if "PC" in solved:
        pc = solved["PC"].policy
        ok = (regulatory_ok(pc, var_spec, econ, m), regulatory_ok(pc, es_spec, econ, m))
        print(f"beta={fmt(beta)}: PC=({pc.alpha:.4f}, {pc.p:.4f}) VaR99.5 ok={ok[0]} ES99 ok={ok[1]}")
    return sorted(warnings)


def cmd_scan(cfg: RunConfig) -> int:
    if cfg.output_dir is None:
        raise UsageError("scan requires --out DIR")
    out = _calibrated(cfg)
    for beta in cfg.betas:
        target = cfg.output_dir / f"beta_{fmt(beta)}" if len(cfg.betas) > 1 else cfg.output_dir
        target.mkdir(parents=True, exist_ok=True)
        warnings = _scan_beta(cfg, out, beta, target)
        (target / "warnings.txt").write_bytes("".join(w + "\n" for w in warnings).encode())
    return EXIT_OK


POINTS = ("pc", "mo", "rs", "reg")


def cmd_solve(cfg: RunConfig, point: str) -> int:
    if point not in POINTS:
        raise UsageError(f"unknown point {point!r}; choose from {', '.join(POINTS)}")
    out = _calibrated(cfg)
    econ = _econ(cfg, out, cfg.beta)
    m = out.model
    if cfg.gamma_sh is not None and cfg.gamma_ph is not None:
        raise UsageError("give at most one of --gamma-sh and --gamma-ph")
    dual = cfg.gamma_ph is not None
    res = Reservation("policyholder", cfg.gamma_ph) if dual else \
        Reservation("shareholder", cfg.gamma_sh if cfg.gamma_sh is not None else out.c0)
    if point == "pc":
        r = pareto_dual(res, econ, m) if dual else pareto_primal(res, econ, m)
    elif point == "mo":
        r = pareto_dual(Reservation("policyholder", monopoly_level(econ, m)), econ, m)
    elif point == "rs":
        r = risk_shift_dual(res, econ, m) if dual else risk_shift(res, econ, m)
    else:
        if cfg.measure is None:
            raise UsageError("solve reg requires --measure")
        spec = cfg.measures()[0]
        r = regulated_dual(res, spec, econ, m) if dual else regulated_risk_shift(res, spec, econ, m)
    pol = r.policy
    items = [("point", point), ("beta", econ.beta), ("w0", econ.w0), ("alpha", pol.alpha),
             ("p", pol.p), ("u_sh", r.utilities.u_sh), ("u_ph", r.utilities.u_ph),
             ("CE", certainty_equivalent_of(pol, econ, m)), ("solvency_prob", r.utilities.solvency_prob),
             ("foc_residual", r.foc_residual), ("binding", ",".join(sorted(r.binding))),
             ("flags", ",".join(sorted(r.flags))), ("iterations", r.iterations)]
    if cfg.mc_check:
        est = mc_utilities(pol, econ, m, McConfig(n_samples=cfg.mc_samples, seed=cfg.seed))
        quad = {"u_sh": r.utilities.u_sh, "u_ph": r.utilities.u_ph,
                "solvency_prob": r.utilities.solvency_prob}
        for k, (mean, se) in est.items():
            items += [(f"mc.{k}", mean), (f"mc.{k}.stderr", se),
                      (f"mc.{k}.z", (mean - quad[k]) / se if se > 0 else 0.0)]
    _emit(kv_text(items), cfg, f"solve_{point}.txt")
    return EXIT_OK


# --------------------------------------------------------------------------
# argument parsing


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--beta", help="CARA coefficient; comma-separated list for scan")
    common.add_argument("--w0", type=float, help="policyholder initial wealth (default 1.34)")
    common.add_argument("--measure", choices=["var", "es"], help="regulatory risk measure for solve reg")
    common.add_argument("--q", type=float, help="confidence level of the risk measure")
    common.add_argument("--gamma-sh", type=float, help="shareholder reservation level (default c0)")
    common.add_argument("--gamma-ph", type=float,
                        help="policyholder reservation level; write negatives as --gamma-ph=-1e-6")
    common.add_argument("--out", type=Path, help="output directory for CSV files")
    common.add_argument("--config", type=Path, help="key=value or JSON config file; flags override it")
    common.add_argument("--seed", type=int, help="Monte Carlo seed")
    common.add_argument("--mc-check", action="store_true", default=None,
                        help="add Monte Carlo cross-checks to the output")

    parser = argparse.ArgumentParser(prog="riskshift", description="Insurance risk-shifting solver.",
                                     epilog=__doc__.split("\n\n", 1)[1],
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("calibrate", parents=[common], help="fit the model to the capital charges")
    sub.add_parser("table1", parents=[common], help="solve the five named points and compare")
    sub.add_parser("scan", parents=[common], help="write level curve, FOC and boundary grids")
    solve = sub.add_parser("solve", parents=[common], help="solve a single named point")
    solve.add_argument("point", choices=POINTS)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    flags = {k: v for k, v in vars(args).items() if k not in ("command", "point", "config")}
    try:
        file_values = read_config_file(args.config) if args.config else {}
        cfg = build_config(file_values, flags)
        if args.command == "calibrate":
            return cmd_calibrate(cfg)
        if args.command == "table1":
            return cmd_table1(cfg)
        if args.command == "scan":
            return cmd_scan(cfg)
        return cmd_solve(cfg, args.point)
    except (UsageError, OSError, json.JSONDecodeError) as exc:
        print(f"riskshift: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DomainError, Infeasible, CalibrationError) as exc:
        print(f"riskshift: infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except ValueError as exc:
        print(f"riskshift: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (NumericError, EvaluationError, ArithmeticError) as exc:
        print(f"riskshift: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
