"""Command-line experiments: ``bdfstab <command> [options]``.

Commands
    certify-beta3       numerically recover sup f = 95/96 and check the closed form
    decompose           build and certify a decomposition for a given beta
    run                 integrate a configured energy and audit the Lyapunov descent
    counterexample      the period-two barrier trajectory for BDFk
    order-study         convergence order against a reference solution
    multivalued-demo    enumerate step branches and audit each of them

Exit codes: 0 success, 2 configuration error, 3 numerical failure,
4 infeasibility.
"""
from __future__ import annotations

import argparse
import configparser
import csv
import io
import logging
import sys
from dataclasses import dataclass, field, fields
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import constants
from .errors import (
    BDFStabError, ConfigError, DomainError, InfeasibleError, OptimizationError, PreconditionError, StepError,
)
from .integrator import SCHEMA_VERSION, SchemeConfig, bootstrap, dumps, order_study, run
from .lyapunov import (
    barrier_audit, budget_check, check_beta, coercive_boundedness_check, descent_audit, multivalued_branches,
    omega_diagnostics, telescoping_gap,
)
from .objective import SemiconvexFunction, build
from .quadform import BETA3, decompose, default_beta, maximize_f, optimal_decomposition

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_INFEASIBLE = 0, 2, 3, 4


def show(x) -> str:
    """Exact rationals as ``p/q (decimal)``; everything else via repr."""
    if isinstance(x, Fraction):
        return f"{x} ({float(x)!r})" if x.denominator != 1 else str(x.numerator)
    return repr(float(x)) if isinstance(x, (float, np.floating)) else str(x)


def parse_number(s: str):
    """``"p/q"`` becomes a Fraction, integers stay ints, anything else a float."""
    s = s.strip()
    try:
        if "/" in s:
            return Fraction(s)
        return int(s)
    except ValueError:
        pass
    try:
        return float(s)
    except ValueError:
        raise ConfigError(f"not a number: {s!r}") from None


def parse_value(s: str):
    """Numbers, ``none``, comma lists and semicolon-separated rows (matrices)."""
    s = s.strip()
    if s.lower() == "none":
        return None
    if ";" in s:
        return [parse_value(row) for row in s.split(";") if row.strip()]
    if "," in s:
        return [parse_number(t) for t in s.split(",") if t.strip()]
    try:
        return parse_number(s)
    except ConfigError:
        return s


def parse_terms(s: str) -> dict:
    """Polynomial terms ``"4:0.25, 2:-0.5"`` or ``"2 0:1, 0 2:1"`` (exponents, colon, coefficient)."""
    out = {}
    for item in s.split(","):
        if not item.strip():
            continue
        exps, _, coef = item.partition(":")
        if not coef:
            raise ConfigError(f"polynomial term {item.strip()!r} needs 'exponents:coefficient'")
        out[tuple(int(e) for e in exps.split())] = float(coef)
    return out


@dataclass
class ExperimentConfig:
    """Everything a command needs, mirrored one-to-one by the INI sections.

    Values that feed energies and initial data are kept as the strings
    written in the file, so ``from_ini(to_ini(c)) == c`` holds exactly.
    """

    command: str = "run"
    seed: int = 0
    format: str = "csv"
    k: int = 3
    dt: str | None = None
    cf_dt: str | None = None
    steps: int = 1000
    solver_tol: float = 1e-12
    stop_tol: float | None = None
    stop_window: int = 5
    selection: str = "lyapunov"
    bootstrap: str = "ramp-up"
    energy: str = "double_well"
    energy_params: dict = field(default_factory=dict)
    init_kind: str = "constant"
    init_value: str = "0"
    init_states: str = ""
    beta: str = "default"
    T: float = 1.0
    dts: str = "0.1, 0.05, 0.025, 0.0125"
    orders: str = "1, 2, 3"

    SECTIONS = {
        "experiment": ("command", "seed", "format"),
        "scheme": ("k", "dt", "cf_dt", "steps", "solver_tol", "stop_tol", "stop_window", "selection", "bootstrap"),
        "init": ("init_kind", "init_value", "init_states"),
        "audit": ("beta",),
        "order": ("T", "dts", "orders"),
    }
    INI_NAMES = {"init_kind": "kind", "init_value": "value", "init_states": "states"}

    @classmethod
    def from_ini(cls, text: str) -> "ExperimentConfig":
        cp = configparser.ConfigParser(interpolation=None)
        cp.optionxform = str
        try:
            cp.read_string(text)
        except configparser.Error as exc:
            raise ConfigError(f"malformed config: {exc}") from exc
        types = {f.name: f.type for f in fields(cls)}
        kw = {}
        for section, names in cls.SECTIONS.items():
            if not cp.has_section(section):
                continue
            known = {cls.INI_NAMES.get(n, n): n for n in names}
            for key, raw in cp.items(section):
                if key not in known:
                    raise ConfigError(f"unknown key {key!r} in [{section}]")
                name = known[key]
                kw[name] = cls._coerce(types[name], raw, f"[{section}] {key}")
        if cp.has_section("energy"):
            params = dict(cp.items("energy"))
            if "name" not in params:
                raise ConfigError("[energy] needs a name")
            kw["energy"] = params.pop("name")
            kw["energy_params"] = params
        extra = set(cp.sections()) - set(cls.SECTIONS) - {"energy"}
        if extra:
            raise ConfigError(f"unknown sections: {sorted(extra)}")
        return cls(**kw)

    @staticmethod
    def _coerce(tp: str, raw: str, where: str):
        raw = raw.strip()
        try:
            if tp == "int":
                return int(raw)
            if tp == "float":
                return float(raw)
            if tp == "float | None":
                return None if raw.lower() == "none" else float(raw)
            if tp == "str | None":
                return None if raw.lower() == "none" else raw
            return raw
        except ValueError:
            raise ConfigError(f"{where}: cannot parse {raw!r}") from None

    @classmethod
    def from_file(cls, path) -> "ExperimentConfig":
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        return cls.from_ini(text)

    def to_ini(self) -> str:
        cp = configparser.ConfigParser(interpolation=None)
        cp.optionxform = str
        for section, names in self.SECTIONS.items():
            cp[section] = {
                self.INI_NAMES.get(n, n): "none" if getattr(self, n) is None else
                (repr(getattr(self, n)) if isinstance(getattr(self, n), float) else str(getattr(self, n)))
                for n in names
            }
        cp["energy"] = {"name": self.energy, **self.energy_params}
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue()

    def build_energy(self) -> SemiconvexFunction:
        params = {}
        for key, raw in self.energy_params.items():
            params[key] = parse_terms(raw) if key == "terms" else parse_value(raw)
        if self.energy == "barrier":
            params.setdefault("k", self.k)
            params.setdefault("dt", self.dt_value(None))
        try:
            return build(self.energy, **params)
        except TypeError as exc:
            raise ConfigError(f"bad parameters for energy {self.energy!r}: {exc}") from exc

    def dt_value(self, F: SemiconvexFunction | None):
        if self.dt is not None:
            dt = parse_number(self.dt)
        elif self.cf_dt is not None:
            if F is None or F.c_F == 0:
                raise ConfigError("cf_dt needs an energy with c_F > 0; give dt instead")
            dt = float(parse_number(self.cf_dt)) / F.c_F
        else:
            raise ConfigError("[scheme] needs dt or cf_dt")
        if dt <= 0:
            raise ConfigError("dt must be positive")
        return dt

    def scheme(self, F: SemiconvexFunction) -> SchemeConfig:
        try:
            return SchemeConfig(k=self.k, dt=float(self.dt_value(F)), max_steps=self.steps,
                                solver_tol=self.solver_tol, stop_tol=self.stop_tol,
                                stop_window=self.stop_window, seed=self.seed)
        except (ValueError, BDFStabError) as exc:
            raise ConfigError(str(exc)) from exc

    def selection_rule(self):
        try:
            return int(self.selection)
        except ValueError:
            return self.selection

    def initial_state(self, F: SemiconvexFunction) -> np.ndarray:
        M = F.dim
        if self.init_kind == "constant":
            return np.full(M, float(parse_number(self.init_value)))
        if self.init_kind == "cosine":
            v = parse_value(self.init_value)
            if not isinstance(v, list) or len(v) != 2:
                raise ConfigError("cosine init needs 'offset, amplitude'")
            x = np.arange(M) / M
            return float(v[0]) + float(v[1]) * np.cos(2 * np.pi * x)
        if self.init_kind == "values":
            v = np.atleast_1d(np.array(parse_value(self.init_value), dtype=float))
            if v.shape != (M,):
                raise ConfigError(f"init values need {M} entries, got {v.size}")
            return v
        raise ConfigError(f"unknown init kind {self.init_kind!r}")

    def initial_states(self, F: SemiconvexFunction, cfg: SchemeConfig) -> list:
        if self.bootstrap == "exact-list":
            rows = [r for r in self.init_states.split(";") if r.strip()]
            states = [np.atleast_1d(np.array(parse_value(r), dtype=float)) for r in rows]
            if any(s.shape != (F.dim,) for s in states):
                raise ConfigError(f"every initial state needs {F.dim} entries")
            return bootstrap(F, cfg, None, "exact-list", states)
        return bootstrap(F, cfg, self.initial_state(F), self.bootstrap)

    def beta_value(self, cf_dt: float):
        if self.beta.strip().lower() == "default":
            return default_beta(cf_dt)
        b = parse_number(self.beta)
        return b if isinstance(b, Fraction) else float(b)


# ---------------------------------------------------------------- output


class Output:
    """Writes data files under ``out`` in the requested format."""

    def __init__(self, out: str | None, fmt: str):
        if fmt not in ("csv", "json"):
            raise ConfigError(f"unknown format {fmt!r}")
        self.dir = Path(out) if out else None
        self.fmt = fmt
        if self.dir is not None:
            self.dir.mkdir(parents=True, exist_ok=True)

    def path(self, name: str) -> Path | None:
        return None if self.dir is None else self.dir / name

    def json(self, name: str, obj):
        p = self.path(name)
        if p is not None:
            p.write_text(dumps({"schema_version": SCHEMA_VERSION, **obj}) + "\n")

    def table(self, name: str, header, rows):
        p = self.path(f"{name}.{self.fmt}")
        if p is None:
            return
        rows = [list(r) for r in rows]
        if self.fmt == "json":
            p.write_text(dumps({"schema_version": SCHEMA_VERSION, "columns": list(header), "rows": rows}) + "\n")
            return
        with open(p, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for r in rows:
                w.writerow([format(v, ".17g") if isinstance(v, float) else v for v in r])

    def config(self, cfg: ExperimentConfig):
        p = self.path("config.ini")
        if p is not None:
            p.write_text(cfg.to_ini())


def _print(report: dict, indent: str = ""):
    for key, val in report.items():
        if isinstance(val, dict):
            print(f"{indent}{key}:")
            _print(val, indent + "  ")
        else:
            print(f"{indent}{key}: {show(val) if isinstance(val, (float, Fraction)) else val}")


# ---------------------------------------------------------------- commands


def cmd_certify_beta3(seed: int = 0, out: Output | None = None) -> int:
    res = maximize_f(seed=seed)
    x_star = np.array([1, 1, -7 / 4]) / np.sqrt(6)
    dist = float(np.max(np.abs(np.array(res.argmax) - x_star)))
    dec = optimal_decomposition()
    report = {
        "beta3_estimate": res.beta_star,
        "beta3_exact": BETA3,
        "gap": res.gap,
        "cross_check": res.cross_check,
        "argmax": list(res.argmax),
        "argmax_exact": "(1/sqrt(6), 1/sqrt(6), -7/(4 sqrt(6)))",
        "argmax_distance": dist,
        "argmax_b_minus_a": res.argmax[1] - res.argmax[0],
        "closed_form_residual_exact": dec.residual(),
        "closed_form_residual_float": dec.float_residual(),
    }
    _print(report)
    if out is not None:
        out.json("certify_beta3.json", {**report, "trace": res.trace})
    ok = res.gap <= 1e-9 and dist <= 1e-6 and dec.residual() == 0
    return EXIT_OK if ok else EXIT_NUMERIC


def _form_report(form) -> dict:
    m = form.exact_matrix() if form.exact else form.matrix
    d = form.d
    return {
        "coefficients": {f"x{i + 1}x{j + 1}": (m[i, j] if i == j else 2 * m[i, j])
                         for i in range(d) for j in range(i, d)},
        "minors": form.leading_minors(),
        "eigenvalues": form.eigenvalues().tolist(),
    }


def cmd_decompose(beta, out: Output | None = None) -> int:
    if beta < 0:
        raise DomainError(f"beta = {beta} < 0")
    dec = decompose(beta)
    report = {
        "beta": beta,
        "beta3": BETA3,
        "q": _form_report(dec.q),
        "r_tilde": _form_report(dec.r_tilde),
        "identity_residual": dec.residual(),
        "float_residual": dec.float_residual(),
        "q_positive_definite": dec.q.is_positive_definite(),
        "r_positive_semidefinite": dec.r_tilde.is_positive_semidefinite(),
        "construction": dec.meta.get("construction", ""),
    }
    _print(report)
    if out is not None:
        out.json("decomposition.json", report)
    return EXIT_OK


def _regime_line(k: int, cf_dt: float) -> str:
    return (f"regime: {constants.regime(k, cf_dt)} (c_F dt = {cf_dt!r}; alpha_{k} = {show(constants.alpha(k))}, "
            f"2 beta_{k} = {show(constants.two_beta(k))})")


def cmd_run(cfg: ExperimentConfig, out: Output | None = None) -> int:
    F = cfg.build_energy()
    scheme = cfg.scheme(F)
    cf_dt = scheme.cf_dt(F)
    print(_regime_line(cfg.k, cf_dt))
    init = cfg.initial_states(F, scheme)
    traj = run(F, scheme, init, selection=cfg.selection_rule())
    traj.meta["resolved_config"] = cfg.to_ini()
    summary = {
        "regime": constants.regime(cfg.k, cf_dt),
        "cf_dt": cf_dt,
        "c_F_source": F.meta.get("c_F_source", ""),
        "steps": len(traj) - len(init),
        "stop_reason": traj.stop_reason,
        "max_residual": max([r for r in traj.residuals[cfg.k:]], default=0.0),
        "config": cfg.to_ini(),
    }
    audit = None
    if cfg.k == 3 and cf_dt < 2 * float(BETA3) and len(traj) > 3:
        beta = cfg.beta_value(cf_dt)
        check_beta(float(beta), cf_dt)
        audit = descent_audit(traj, beta, None, F)
        summary["audit"] = {
            **audit.summary(),
            "budget": vars(budget_check(audit, F.lower_bound)),
            "telescoping_gap": telescoping_gap(audit),
        }
    elif cfg.k == 3:
        summary["audit"] = {"certifiable": False,
                            "reason": "admissible beta range [c_F dt/2, 95/96) is empty" if cf_dt >= 2 * float(BETA3)
                            else "fewer than four states"}
    if len(traj) > cfg.k:
        summary["omega"] = vars(omega_diagnostics(traj, F))
        if F.coercive:
            try:
                summary["bounded"] = vars(coercive_boundedness_check(traj, F))
            except PreconditionError as exc:
                summary["bounded"] = {"skipped": str(exc)}
    for key in ("steps", "stop_reason", "max_residual"):
        print(f"{key}: {show(summary[key]) if isinstance(summary[key], float) else summary[key]}")
    if audit is not None:
        print(f"audit: beta = {audit.beta!r}, min margin = {summary['audit']['min_margin']!r}, "
              f"margins ok = {audit.margins_ok()}, budget ok = {summary['audit']['budget']['ok']}")
    if out is not None:
        out.config(cfg)
        M = F.dim
        out.table("trajectory", ["step", *[f"u{i}" for i in range(M)], "residual", "diff_norm"],
                  ([n, *map(float, U), float(r), float(d)] for n, U, r, d in traj.rows()))
        if audit is not None:
            out.table("audit", ["step", "lyapunov", "margin", "r_term", "w_norm", "cumulative_r"],
                      zip(audit.steps.tolist(), audit.lyapunov.tolist(), audit.margins.tolist(),
                          audit.r_terms.tolist(), audit.w_norms.tolist(), audit.cumulative_r.tolist()))
        out.json("summary.json", summary)
    return EXIT_OK if audit is None or audit.margins_ok() else EXIT_NUMERIC


def cmd_counterexample(k: int, out: Output | None = None, steps: int = 1000) -> int:
    rep = barrier_audit(k, Fraction(1), steps)
    report = {
        "k": k,
        "lambda_k": rep.lambda_k,
        "alpha_k": constants.alpha(k),
        "two_beta_k": constants.two_beta(k),
        "cf_dt": rep.lambda_k,
        "regime": rep.regime,
        "exact_recursion": rep.exact_residual_zero,
        "max_float_residual": rep.max_float_residual,
        "diff_norm_deviation_from_2": rep.diff_norm_deviation,
        "steps": len(rep.trajectory) - k,
        "certifiable": rep.certifiable,
        "reason": rep.reason,
    }
    _print(report)
    if out is not None:
        out.json("counterexample.json", report)
        out.table("trajectory", ["step", "u0", "residual", "diff_norm"],
                  ([n, float(U[0]), float(r), float(d)] for n, U, r, d in rep.trajectory.rows()))
    ok = rep.exact_residual_zero and rep.max_float_residual <= 1e-13 and rep.diff_norm_deviation <= 1e-12
    return EXIT_OK if ok else EXIT_NUMERIC


def cmd_order_study(cfg: ExperimentConfig, out: Output | None = None) -> int:
    F = cfg.build_energy()
    U0 = cfg.initial_state(F)
    dts = [float(parse_number(t)) for t in cfg.dts.split(",") if t.strip()]
    orders = [int(t) for t in cfg.orders.split(",") if t.strip()]
    rows, slopes = [], {}
    for k in orders:
        study = order_study(F, U0, cfg.T, dts, k)
        slopes[f"BDF{k}"] = study.slope
        rows.extend((k, dt, err) for dt, err in study.rows())
        print(f"BDF{k}: slope = {'undefined' if study.slope is None else format(study.slope, '.4f')} "
              f"(reference: {study.reference})")
    for k, dt, err in rows:
        print(f"  k={k} dt={dt!r} error={err!r}")
    if out is not None:
        out.config(cfg)
        out.table("order_study", ["k", "dt", "error"], rows)
        out.json("order_study_summary.json", {"slopes": slopes, "config": cfg.to_ini()})
    return EXIT_OK


def cmd_multivalued_demo(cfg: ExperimentConfig, out: Output | None = None) -> int:
    F = cfg.build_energy()
    scheme = cfg.scheme(F)
    cf_dt = scheme.cf_dt(F)
    print(_regime_line(3, cf_dt))
    if cfg.k != 3:
        raise ConfigError("multivalued-demo runs BDF3 (k = 3)")
    init = cfg.initial_states(F, scheme)
    beta = cfg.beta_value(cf_dt)
    check_beta(float(beta), cf_dt)
    branches, sols = multivalued_branches(F, scheme, init, beta)
    report = {
        "regime": constants.regime(3, cf_dt),
        "cf_dt": cf_dt,
        "beta": beta,
        "branch_count": len(branches),
        "degenerate_intervals": [list(iv) for iv in sols.degenerate_intervals],
        "branches": {
            str(b.index): {
                "first_state": b.first_state.tolist(),
                "final_state": b.trajectory.states[-1].tolist(),
                "steps": len(b.trajectory) - 3,
                "min_margin": float(b.audit.margins.min()) if len(b.audit.margins) else None,
                "margins_ok": b.audit.margins_ok(),
                "budget_ok": budget_check(b.audit, F.lower_bound).ok,
            }
            for b in branches
        },
        "config": cfg.to_ini(),
    }
    print(f"branches at the first step: {len(branches)}")
    for b in branches:
        r = report["branches"][str(b.index)]
        print(f"  branch {b.index}: U^3 = {r['first_state']} -> {r['final_state']}, "
              f"min margin {r['min_margin']!r}, audit {'pass' if r['margins_ok'] else 'FAIL'}")
    if len(branches) < 2:
        print("no branching at this step: the step equation has a single solution")
    if out is not None:
        out.config(cfg)
        out.json("multivalued.json", report)
        for b in branches:
            out.table(f"branch{b.index}_audit", ["step", "lyapunov", "margin", "r_term", "w_norm"],
                      zip(b.audit.steps.tolist(), b.audit.lyapunov.tolist(), b.audit.margins.tolist(),
                          b.audit.r_terms.tolist(), b.audit.w_norms.tolist()))
    return EXIT_OK if all(b.audit.margins_ok() for b in branches) else EXIT_NUMERIC


# ---------------------------------------------------------------- entry point


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="bdfstab", description="BDF1-3 gradient-stability experiments")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", help="directory for data files (nothing is written without it)")
    common.add_argument("--seed", type=int, help="random seed (overrides the config)")
    common.add_argument("--format", choices=("csv", "json"), help="table format (default csv)")
    common.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("certify-beta3", parents=[common], help="recover beta_3 = 95/96 numerically")
    d = sub.add_parser("decompose", parents=[common], help="certificate for a given beta")
    d.add_argument("--beta", required=True, help="rational 'p/q' or decimal")
    for name in ("run", "order-study", "multivalued-demo"):
        sp = sub.add_parser(name, parents=[common])
        sp.add_argument("--config", required=True, help="INI experiment file")
    c = sub.add_parser("counterexample", parents=[common], help="period-two barrier trajectory")
    c.add_argument("--k", type=int, required=True, choices=constants.ORDERS)
    c.add_argument("--steps", type=int, default=1000)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        cfg = ExperimentConfig.from_file(args.config) if getattr(args, "config", None) else ExperimentConfig()
        if args.seed is not None:
            cfg.seed = args.seed
        if args.format is not None:
            cfg.format = args.format
        out = Output(args.out, cfg.format) if args.out else None
        if args.command == "certify-beta3":
            return cmd_certify_beta3(cfg.seed, out)
        if args.command == "decompose":
            return cmd_decompose(parse_number(args.beta), out)
        if args.command == "run":
            return cmd_run(cfg, out)
        if args.command == "counterexample":
            return cmd_counterexample(args.k, out, args.steps)
        if args.command == "order-study":
            return cmd_order_study(cfg, out)
        return cmd_multivalued_demo(cfg, out)
    except InfeasibleError as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except StepError as exc:
        print(f"numerical failure at step {exc.step}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OptimizationError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, DomainError, PreconditionError, BDFStabError, ValueError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
