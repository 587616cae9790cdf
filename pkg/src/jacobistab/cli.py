"""Command-line front end.

Subcommands configure a system (built-in by name, or custom via metric /
potential expression strings), run experiments, verify the identity
suite, and emit CSV / JSON / gnuplot-ready data files.

Exit codes: 0 success, 1 identity failure, 2 configuration error,
3 numerical failure (chart exit, forbidden region, energy drift).
"""

from __future__ import annotations

import argparse
import json
import os
import re
import sys

import numpy as np

from .dynamics import (CurveGeometry, DeviationField, MechanicalSystem,
                       _write_csv_atomic, _write_text_atomic,
                       brute_force_deviation, integrate_deviation,
                       integrate_newton, linearization_initial_data)
from .errors import ConfigError, GeometryError
from .expressions import metric_from_exprs, scalar_field_from_expr
from .geometry import BUILTIN_METRICS, cov_derivative_along, metric_by_name
from .jacobi import (geodesic_from_trajectory, integrate_geodesic,
                     jacobi_metric, jacobi_operator_direct,
                     jacobi_operator_via_g, equal_energy_projection,
                     relation_equal_energy, s_of_t)
from .numdiff import local_derivative
from .systems import BUILTIN_SYSTEMS, builtin_setup
from .variation import (evaluate_functionals, make_proper_variation,
                        write_sweep_csv)
from .verify import DEFAULT_TOLERANCES, check_lemma_suite, run_verification

_METRIC_ENTRY = re.compile(r"^metric\.g\.(\d+)\.(\d+)$")

_SCALAR_KEYS = {
    "system", "metric", "metric.dim", "potential", "energy", "step", "seed",
    "alpha", "out", "variation.modes", "variation.amplitude",
    "variation.count", "variation.orthogonal", "drift_bound",
}
_LIST_KEYS = {"q0", "v0", "t_span", "s_span", "dq", "dv", "direction"}


def parse_config_text(text: str) -> dict:
    """Parse a flat ``key = value`` config file with dotted sections."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigError(f"line {lineno}: empty key")
        if key in out:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        if (key not in _SCALAR_KEYS and key not in _LIST_KEYS
                and not _METRIC_ENTRY.match(key)
                and not key.startswith("tolerance.")):
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        out[key] = value
    return out


def load_config(path) -> dict:
    try:
        with open(path) as fh:
            return parse_config_text(fh.read())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None


def _get_float(cfg, key, default=None):
    if key not in cfg:
        return default
    try:
        return float(cfg[key])
    except ValueError:
        raise ConfigError(f"{key}: expected a number, got {cfg[key]!r}") from None


def _get_int(cfg, key, default=None):
    if key not in cfg:
        return default
    try:
        return int(cfg[key])
    except ValueError:
        raise ConfigError(f"{key}: expected an integer, got {cfg[key]!r}") from None

def _get_bool(cfg, key, default=False):
    if key not in cfg:
        return default
    val = cfg[key].strip().lower()
    if val in ("true", "yes", "1"):
        return True
    if val in ("false", "no", "0"):
        return False
    raise ConfigError(f"{key}: expected true/false, got {cfg[key]!r}")


def _get_list(cfg, key, default=None):
    if key not in cfg:
        return default
    try:
        return np.array([float(x) for x in cfg[key].split(",")])
    except ValueError:
        raise ConfigError(f"{key}: expected comma-separated numbers, got {cfg[key]!r}") from None


class Experiment:
    """Resolved configuration: system, initial data, spans and knobs."""

    def __init__(self, cfg: dict, args):
        self.cfg = cfg
        name = cfg.get("system", "flat-harmonic")
        if name == "custom":
            self.sys = self._custom_system(cfg)
            self.q0 = _get_list(cfg, "q0")
            self.v0 = _get_list(cfg, "v0")
            if self.q0 is None or self.v0 is None:
                raise ConfigError("custom systems need q0 and v0")
            self.t_span = tuple(_get_list(cfg, "t_span", np.array([0.0, 1.0])))
            self.step = _get_float(cfg, "step", 1e-3)
        elif name in BUILTIN_SYSTEMS:
            su = builtin_setup(name)
            self.sys = su.system
            self.q0 = _get_list(cfg, "q0", su.q0)
            self.v0 = _get_list(cfg, "v0", su.v0)
            self.t_span = tuple(_get_list(cfg, "t_span", np.array(su.t_span)))
            self.step = _get_float(cfg, "step", su.step)
        else:
            raise ConfigError(f"unknown system {name!r} "
                              f"(builtin: {', '.join(BUILTIN_SYSTEMS)}, or 'custom')")
        self.name = name
        if args.step is not None:
            self.step = args.step
        self.seed = args.seed if args.seed is not None else _get_int(cfg, "seed", 42)
        self.alpha = _get_float(cfg, "alpha", 1e-4)
        self.drift_bound = _get_float(cfg, "drift_bound", 1e-6)
        self.s_span = _get_list(cfg, "s_span")
        self.direction = _get_list(cfg, "direction")
        self.dq = _get_list(cfg, "dq", np.zeros(self.sys.metric.dim))
        dv_default = np.zeros(self.sys.metric.dim)
        dv_default[0] = 1.0
        self.dv = _get_list(cfg, "dv", dv_default)
        self.var_modes = _get_int(cfg, "variation.modes", 3)
        self.var_amplitude = _get_float(cfg, "variation.amplitude", 1.0)
        self.var_count = _get_int(cfg, "variation.count", 5)
        self.var_orthogonal = _get_bool(cfg, "variation.orthogonal", False)

        derived = self.sys.energy(self.q0, self.v0)
        stated = _get_float(cfg, "energy")
        if stated is not None and abs(stated - derived) > 1e-10:
            raise ConfigError(f"energy = {stated!r} inconsistent with initial "
                              f"conditions (which give {derived!r})")
        self.energy = derived

    @staticmethod
    def _custom_system(cfg) -> MechanicalSystem:
        dim = _get_int(cfg, "metric.dim", 2)
        entries = {}
        for key, value in cfg.items():
            m = _METRIC_ENTRY.match(key)
            if m:
                entries[(int(m.group(1)), int(m.group(2)))] = value
        if entries:
            metric = metric_from_exprs(entries, dim)
        else:
            mname = cfg.get("metric", "flat")
            if mname not in BUILTIN_METRICS:
                raise ConfigError(f"unknown metric {mname!r} (choose from {BUILTIN_METRICS})")
            metric = metric_by_name(mname, dim)
        potential = cfg.get("potential", "0")
        field = scalar_field_from_expr(potential, dim)
        return MechanicalSystem(metric, U=field.value, name="custom")

    def tolerance_overrides(self, args) -> dict:
        return tolerance_overrides(self.cfg, args)


def tolerance_overrides(cfg: dict, args) -> dict:
    tol = {}
    for key, value in cfg.items():
        if key.startswith("tolerance."):
            tol[key.split(".", 1)[1]] = float(value)
    for item in args.tolerance or []:
        if "=" not in item:
            raise ConfigError(f"--tolerance expects NAME=VALUE, got {item!r}")
        name, value = item.split("=", 1)
        try:
            tol[name.strip()] = float(value)
        except ValueError:
            raise ConfigError(f"--tolerance {item!r}: bad number") from None
    for name in tol:
        if name not in DEFAULT_TOLERANCES:
            raise ConfigError(f"unknown tolerance {name!r} "
                              f"(known: {', '.join(sorted(DEFAULT_TOLERANCES))})")
    return tol


def _out_dir(exp, args) -> str:
    out = args.out or (exp.cfg.get("out") if exp else None) or "."
    os.makedirs(out, exist_ok=True)
    return out


def _emit(args, payload: dict, human: str) -> None:
    if args.json:
        print(json.dumps(payload, indent=1, sort_keys=True))
    else:
        print(human)


def _write_json(path, payload) -> None:
    _write_text_atomic(path, json.dumps(payload, indent=1, sort_keys=True))


def cmd_simulate(exp: Experiment, args) -> int:
    traj = integrate_newton(exp.sys, exp.q0, exp.v0, exp.t_span, exp.step,
                            drift_bound=exp.drift_bound)
    drift = max(abs(exp.sys.energy(q, v) - traj.energy)
                for q, v in zip(traj.points[::50], traj.velocities[::50]))
    out = _out_dir(exp, args)
    traj.write_csv(os.path.join(out, "trajectory.csv"))
    meta = traj.to_dict()
    meta.update({"system": exp.name, "energy_drift": drift / max(1.0, abs(traj.energy)),
                 "seed": exp.seed})
    _write_json(os.path.join(out, "trajectory.json"), meta)
    _emit(args, meta, f"simulate: {len(traj)} samples, E = {traj.energy:.12g}, "
                      f"relative drift {meta['energy_drift']:.3e} -> {out}/trajectory.csv")
    return 0


def cmd_geodesic(exp: Experiment, args) -> int:
    jm = jacobi_metric(exp.sys, exp.energy)
    direction = exp.direction if exp.direction is not None else exp.v0
    if exp.s_span is not None:
        s_span = tuple(exp.s_span)
    else:
        traj = integrate_newton(exp.sys, exp.q0, exp.v0, exp.t_span, exp.step,
                                drift_bound=exp.drift_bound)
        s_span = (0.0, float(s_of_t(jm, traj).s[-1]))
    geo = integrate_geodesic(jm, exp.q0, direction, s_span, exp.step)
    out = _out_dir(exp, args)
    n = geo.points.shape[1]
    header = (["s"] + [f"q{i+1}" for i in range(n)]
              + [f"u{i+1}" for i in range(n)] + ["t"])
    rows = np.hstack([geo.s[:, None], geo.points, geo.tangents, geo.t_of_s[:, None]])
    _write_csv_atomic(os.path.join(out, "geodesic.csv"), header, rows)
    meta = {"system": exp.name, "E": exp.energy, "s_span": list(s_span),
            "samples": len(geo), "truncated": geo.truncated}
    _write_json(os.path.join(out, "geodesic.json"), meta)
    _emit(args, meta, f"geodesic: {len(geo)} samples over s in {s_span}, "
                      f"truncated={geo.truncated} -> {out}/geodesic.csv")
    return 0


def cmd_deviation(exp: Experiment, args) -> int:
    oracle = brute_force_deviation(exp.sys, exp.q0, exp.v0, exp.dq, exp.dv,
                                   exp.alpha, exp.t_span, exp.step)
    v0, dv0 = linearization_initial_data(exp.sys, exp.q0, exp.v0, exp.dq, exp.dv)
    lin = integrate_deviation(exp.sys, oracle.trajectory, v0, dv0)
    sup = float(np.max(np.abs(oracle.V - lin.V)))
    out = _out_dir(exp, args)
    lin.write_csv(os.path.join(out, "deviation.csv"))
    meta = {"system": exp.name, "alpha": exp.alpha, "oracle_sup": sup,
            "samples": len(oracle.trajectory), "seed": exp.seed}
    _write_json(os.path.join(out, "deviation.json"), meta)
    _emit(args, meta, f"deviation: linearized vs brute-force sup = {sup:.3e} "
                      f"-> {out}/deviation.csv")
    return 0


def cmd_compare_operators(exp: Experiment, args) -> int:
    tol = exp.tolerance_overrides(args)
    tolerances = {**DEFAULT_TOLERANCES, **tol}
    pad = 10
    t0, t1 = exp.t_span
    traj = integrate_newton(exp.sys, exp.q0, exp.v0,
                            (t0 - pad * exp.step, t1 + pad * exp.step), exp.step,
                            drift_bound=exp.drift_bound)
    core = slice(pad, len(traj) - pad)
    cache = CurveGeometry(exp.sys.metric, traj.points, exp.sys)
    jm = jacobi_metric(exp.sys, exp.energy)
    geo = geodesic_from_trajectory(jm, traj)
    h_cache = CurveGeometry(jm.h, geo.points)

    rng = np.random.default_rng(exp.seed)
    span = traj.times[-1] - traj.times[0]
    phase = np.pi * (traj.times - traj.times[0]) / span
    identity_sup = 0.0
    for _ in range(exp.var_count):
        coeff = rng.uniform(-1.0, 1.0, size=(exp.var_modes, traj.dim))
        v = np.zeros_like(traj.points)
        for k, row in enumerate(coeff, start=1):
            v += np.sin(k * phase)[:, None] * row[None, :]
        dv = cov_derivative_along(exp.sys.metric, traj.as_curve(), v, order=4,
                                  gammas=cache.gamma)
        dev = DeviationField(traj, v, dv)
        lhs = jacobi_operator_direct(jm, geo, v, cache=h_cache)
        rhs = jacobi_operator_via_g(exp.sys, exp.energy, traj, dev, cache=cache, jm=jm)
        identity_sup = max(identity_sup, float(np.max(np.abs((lhs - rhs)[core]))))

    # equal-energy restriction on an orthogonal field
    speed2 = np.einsum('nij,ni,nj->n', cache.g, traj.velocities, traj.velocities)
    raw = np.sin(phase)[:, None] * rng.uniform(-1.0, 1.0, traj.dim)[None, :]
    mu = np.einsum('nij,ni,nj->n', cache.g, traj.velocities, raw) / speed2
    vperp = raw - mu[:, None] * traj.velocities
    dev = equal_energy_projection(exp.sys, traj, vperp, cache=cache)
    rep = relation_equal_energy(exp.sys, exp.energy, traj, dev,
                                cache=cache, jm=jm, h_cache=h_cache)

    w = 0.5 * jm.factor_values(traj.points)
    v_dot_gu = np.einsum('nij,ni,nj->n', cache.g, dev.V, cache.grad_U)
    dscal = local_derivative(traj.times, v_dot_gu / w, m=1, width=7)
    corr = np.abs(dscal[:, None] * traj.velocities / (2.0 * w[:, None]) ** 2).max(axis=1)

    out = _out_dir(exp, args)
    lines = ["# t  correction_magnitude"]
    for t, c in zip(traj.times[core], corr[core]):
        lines.append(f"{t:.17g} {c:.17g}")
    _write_text_atomic(os.path.join(out, "compare_operators.dat"), "\n".join(lines) + "\n")

    payload = {"system": exp.name, "E": exp.energy, "seed": exp.seed,
               "operator_identity_sup": identity_sup,
               "equal_energy_identity_sup": rep["sup_norm"],
               "correction_sup": rep["correction_sup"],
               "constraint_sup": rep["constraint_sup"],
               "fields": exp.var_count, "grid_size": int(core.stop - core.start)}
    _write_json(os.path.join(out, "compare_operators.json"), payload)
    ok = (identity_sup < tolerances["operator-identity"]
          and rep["sup_norm"] < tolerances["equal-energy-identity"])
    _emit(args, payload,
          f"compare-operators[{exp.name}]: identity sup {identity_sup:.3e}, "
          f"equal-energy sup {rep['sup_norm']:.3e}, "
          f"correction sup {rep['correction_sup']:.3e} -> {out}/compare_operators.dat")
    return 0 if ok else 1


def cmd_second_variation(exp: Experiment, args) -> int:
    traj = integrate_newton(exp.sys, exp.q0, exp.v0, exp.t_span, exp.step,
                            drift_bound=exp.drift_bound)
    cache = CurveGeometry(exp.sys.metric, traj.points, exp.sys)
    jm = jacobi_metric(exp.sys, exp.energy)
    geo = geodesic_from_trajectory(jm, traj)
    h_cache = CurveGeometry(jm.h, geo.points)
    reports = []
    for k in range(exp.var_count):
        var = make_proper_variation(traj, modes=exp.var_modes, seed=exp.seed + k,
                                    amplitude=exp.var_amplitude)
        orth = make_proper_variation(traj, modes=exp.var_modes, seed=exp.seed + 1000 + k,
                                     amplitude=exp.var_amplitude, orthogonal=True,
                                     sys=exp.sys, cache=cache)
        reports.append(evaluate_functionals(exp.sys, exp.energy, traj, var,
                                            orth_var=orth, cache=cache, jm=jm,
                                            h_cache=h_cache))
    out = _out_dir(exp, args)
    write_sweep_csv(os.path.join(out, "second_variation.csv"), reports)
    payload = {"system": exp.name, "E": exp.energy, "count": len(reports),
               "max_thm1_residual": max(r.thm1_residual for r in reports),
               "max_thm2_residual": max(r.thm2_residual for r in reports),
               "max_orth_residual": max(r.orth_residual for r in reports)}
    _write_json(os.path.join(out, "second_variation.json"), payload)
    _emit(args, payload,
          f"second-variation[{exp.name}]: {len(reports)} variations, "
          f"worst residuals thm1 {payload['max_thm1_residual']:.3e} / "
          f"thm2 {payload['max_thm2_residual']:.3e} -> {out}/second_variation.csv")
    return 0


def _verdict_output(args, results, out, filename) -> int:
    payload = [r.to_dict() for r in results]
    if out is not None:
        _write_json(os.path.join(out, filename), payload)
    if args.json:
        print(json.dumps(payload, indent=1, sort_keys=True))
    else:
        width = max(len(r.name) for r in results)
        for r in results:
            state = "PASS" if r.passed else "FAIL"
            print(f"{state}  {r.name:<{width}}  value={r.value:.3e} "
                  f"{r.comparison} tol={r.tolerance:.3e}")
    return 0 if all(r.passed for r in results) else 1


def cmd_verify_lemmas(exp, args) -> int:
    tol = tolerance_overrides(exp.cfg if exp else {}, args)
    results = check_lemma_suite(tolerances=tol, fault=args.inject_fault)
    out = _out_dir(exp, args)
    return _verdict_output(args, results, out, "verify_lemmas.json")


def cmd_verify_all(exp, args) -> int:
    tol = tolerance_overrides(exp.cfg if exp else {}, args)
    checks = args.checks.split(",") if args.checks else None
    results = run_verification(tolerances=tol, fault=args.inject_fault, checks=checks)
    out = _out_dir(exp, args)
    return _verdict_output(args, results, out, "verify_all.json")


def cmd_report(exp, args) -> int:
    out = args.out or (exp.cfg.get("out") if exp else None) or "."
    rows = []
    for name in sorted(os.listdir(out)):
        if not name.endswith(".json"):
            continue
        with open(os.path.join(out, name)) as fh:
            data = json.load(fh)
        if isinstance(data, list):
            for rec in data:
                if "identity" in rec:
                    rows.append((name, rec["identity"],
                                 "PASS" if rec.get("passed") else "FAIL",
                                 rec.get("value")))
        else:
            summary = {k: v for k, v in data.items()
                       if isinstance(v, (int, float)) and not isinstance(v, bool)}
            rows.append((name, data.get("system", ""), "", summary))
    if args.json:
        print(json.dumps([{"file": f, "item": i, "state": s, "value": v}
                          for f, i, s, v in rows], indent=1, default=str))
    else:
        if not rows:
            print(f"no JSON reports found in {out}")
        for f, item, state, value in rows:
            print(f"{f:<28} {str(item):<32} {state:<5} {value}")
    return 0


_COMMANDS = {
    "simulate": (cmd_simulate, True),
    "geodesic": (cmd_geodesic, True),
    "deviation": (cmd_deviation, True),
    "compare-operators": (cmd_compare_operators, True),
    "second-variation": (cmd_second_variation, True),
    "verify-lemmas": (cmd_verify_lemmas, False),
    "verify-all": (cmd_verify_all, False),
    "report": (cmd_report, False),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="jacobistab",
        description="Trajectory stability vs Jacobi-metric geodesic stability.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="experiment config file (key = value lines)")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--step", type=float, default=None)
        p.add_argument("--out", default=None, help="output directory")
        p.add_argument("--json", action="store_true",
                       help="machine-readable stdout")
        p.add_argument("--tolerance", action="append", metavar="NAME=VALUE",
                       help="override a verification tolerance")
        p.add_argument("--checks", default=None,
                       help="comma-separated subset of checks (verify-all only)")
        p.add_argument("--inject-fault", default=None, help=argparse.SUPPRESS)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    fn, needs_system = _COMMANDS[args.command]
    try:
        cfg = load_config(args.config) if args.config else {}
        if needs_system:
            exp = Experiment(cfg, args)
        else:
            exp = Experiment(cfg, args) if cfg else None
        return fn(exp, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except GeometryError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
