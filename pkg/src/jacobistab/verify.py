"""Identity-verification suite over the built-in systems.

Each check evaluates one of the toolkit's core identities with its two
sides produced by independent code paths, and reports the worst residual
against a pinned tolerance.  The same suite backs both the acceptance
tests and the ``verify-all`` CLI command.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.optimize import brentq

from .conformal import ConformalFactor, lemma_residuals
from .dynamics import (CurveGeometry, DeviationField, brute_force_deviation,
                       integrate_deviation, integrate_newton,
                       linearization_initial_data)
from .geometry import ChartMetric, cov_derivative_along, metric_by_name
from .jacobi import (geodesic_from_trajectory, jacobi_metric,
                     jacobi_operator_direct, jacobi_operator_via_g,
                     equal_energy_projection, maupertuis_roundtrip,
                     relation_equal_energy)
from .systems import all_setups, builtin_setup
from .variation import (action_second_difference, make_proper_variation,
                        orthogonal_identity_residual, second_variation_LJ,
                        second_variation_S, theorem2_residual)

DEFAULT_TOLERANCES = {
    "lemma-analytic": 1e-7,
    "lemma-fd": 1e-4,
    "roundtrip": 1e-6,
    "operator-identity": 1e-6,
    "equal-energy-identity": 1e-6,
    "equal-energy-constraint": 1e-8,
    "equal-energy-correction-min": 1e-2,
    "theorem1": 1e-6,
    "theorem2": 1e-6,
    "theorem2-integrand-min": -1e-12,
    "orthogonal-identity": 1e-6,
    "conjugate-point-arc": 1e-3,
    "conjugate-point-value": 1e-4,
    "linearization": 1e-5,
    "energy-drift": 1e-8,
    "action-consistency": 1e-5,
}


@dataclass
class CheckResult:
    """Outcome of one identity check."""

    name: str
    value: float
    tolerance: float
    passed: bool
    comparison: str = "<"      # value < tolerance passes ("<") or value > tolerance (">")
    detail: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"identity": self.name, "value": self.value,
                "tolerance": self.tolerance, "comparison": self.comparison,
                "passed": bool(self.passed), **self.detail}


def _result(name, value, tol, comparison="<", **detail):
    passed = (value < tol) if comparison == "<" else (value > tol)
    return CheckResult(name=name, value=float(value), tolerance=float(tol),
                       passed=bool(passed), comparison=comparison, detail=detail)


class SystemContext:
    """Lazily integrated trajectories and geometry caches for one system.

    The padded trajectory extends the requested span by a few steps on
    each side so that operator stencils are centered everywhere on the
    core window.
    """

    def __init__(self, setup, pad_steps: int = 10):
        self.setup = setup
        self.sys = setup.system
        self.E = setup.energy
        self.pad_steps = pad_steps

    @cached_property
    def traj(self):
        su = self.setup
        return integrate_newton(self.sys, su.q0, su.v0, su.t_span, su.step)

    @cached_property
    def cache(self):
        return CurveGeometry(self.sys.metric, self.traj.points, self.sys)

    @cached_property
    def jm(self):
        return jacobi_metric(self.sys, self.E)

    @cached_property
    def geo(self):
        return geodesic_from_trajectory(self.jm, self.traj)

    @cached_property
    def h_cache(self):
        return CurveGeometry(self.jm.h, self.geo.points)

    @cached_property
    def padded_traj(self):
        su = self.setup
        pad = self.pad_steps * su.step
        return integrate_newton(self.sys, su.q0, su.v0,
                                (su.t_span[0] - pad, su.t_span[1] + pad), su.step)

    @cached_property
    def padded_cache(self):
        return CurveGeometry(self.sys.metric, self.padded_traj.points, self.sys)

    @cached_property
    def padded_geo(self):
        return geodesic_from_trajectory(self.jm, self.padded_traj)

    @cached_property
    def padded_h_cache(self):
        return CurveGeometry(self.jm.h, self.padded_geo.points)

    def core(self):
        return slice(self.pad_steps, len(self.padded_traj) - self.pad_steps)


def _contexts(system_names=None):
    setups = all_setups() if system_names is None else [builtin_setup(n) for n in system_names]
    return [SystemContext(su) for su in setups]


# ---------------------------------------------------------------------------
# Factors for the rescaling-formula suite
# ---------------------------------------------------------------------------

def exp2x_factor() -> ConformalFactor:
    def f(p):
        return float(np.exp(2.0 * p[0]))

    def df(p):
        out = np.zeros(np.asarray(p).size)
        out[0] = 2.0 * np.exp(2.0 * p[0])
        return out

    def d2f(p):
        n = np.asarray(p).size
        out = np.zeros((n, n))
        out[0, 0] = 4.0 * np.exp(2.0 * p[0])
        return out

    return ConformalFactor(f=f, df=df, d2f=d2f)


def jacobi_harmonic_factor(E: float = 5.0) -> ConformalFactor:
    """Jacobi-style factor ``2(E - U)`` for a harmonic potential."""

    def f(p):
        p = np.asarray(p, dtype=float)
        return float(2.0 * (E - 0.5 * p @ p))

    return ConformalFactor(f=f,
                           df=lambda p: -2.0 * np.asarray(p, dtype=float),
                           d2f=lambda p: -2.0 * np.eye(np.asarray(p).size))


_LEMMA_BOXES = {
    "flat": ((-1.0, -1.0), (1.0, 1.0)),
    "sphere": ((0.7, -1.0), (2.4, 1.0)),
    "hyperbolic": ((-1.0, 0.6), (1.0, 2.0)),
}


def _strip_analytic(metric: ChartMetric) -> ChartMetric:
    return ChartMetric(dim=metric.dim, g_eval=metric.g_eval,
                       domain_guard=metric.domain_guard, name=metric.name + "-fd")


def check_lemma_suite(tolerances=None, n_samples: int = 100, seed: int = 20240101,
                      fault: Optional[str] = None):
    """Rescaling/reparametrization formulas on three metrics and two factors,
    analytic-derivative and finite-difference paths."""
    tol = {**DEFAULT_TOLERANCES, **(tolerances or {})}
    results = []
    for path in ("analytic", "fd"):
        worst = {"lemma1": 0.0, "lemma2": 0.0, "lemma3": 0.0}
        detail = {}
        for mname in ("flat", "sphere", "hyperbolic"):
            metric = metric_by_name(mname)
            for fname, factor in (("e2x", exp2x_factor()),
                                  ("jacobi-harmonic", jacobi_harmonic_factor())):
                if path == "fd":
                    metric_used = _strip_analytic(metric)
                    factor_used = ConformalFactor(f=factor.f)
                else:
                    metric_used, factor_used = metric, factor
                recs = lemma_residuals(metric_used, factor_used, n_samples=n_samples,
                                       seed=seed, box=_LEMMA_BOXES[mname], fault=fault)
                for rec in recs:
                    worst[rec["lemma"]] = max(worst[rec["lemma"]], rec["max_residual"])
                detail[f"{mname}/{fname}"] = {r["lemma"]: r["max_residual"] for r in recs}
        tkey = "lemma-analytic" if path == "analytic" else "lemma-fd"
        for lemma in ("lemma1", "lemma2", "lemma3"):
            results.append(_result(f"{lemma}-{path}", worst[lemma], tol[tkey],
                                   samples=n_samples, seed=seed))
    return results


def check_roundtrip(tolerances=None):
    """Trajectory vs reparametrized Jacobi-metric geodesic."""
    tol = {**DEFAULT_TOLERANCES, **(tolerances or {})}
    results = []
    su = builtin_setup("flat-harmonic")
    rep = maupertuis_roundtrip(su.system, su.energy, su.q0, su.v0,
                               (0.0, 2.0 * np.pi), step=1e-3, geodesic_method="rk4")
    results.append(_result("roundtrip-harmonic", rep["sup_norm"], tol["roundtrip"],
                           **{k: rep[k] for k in ("grid_size", "geodesic_method")}))
    su = builtin_setup("uniform-gravity")
    rep = maupertuis_roundtrip(su.system, su.energy, su.q0, su.v0,
                               (0.0, 0.9), step=1e-3, geodesic_method="rk45")
    results.append(_result("roundtrip-gravity", rep["sup_norm"], tol["roundtrip"],
                           **{k: rep[k] for k in ("grid_size", "geodesic_method")}))
    return results


def _random_field(rng, times, dim, modes=3):
    t0, t1 = times[0], times[-1]
    phase = np.pi * (times - t0) / (t1 - t0)
    coeff = rng.uniform(-1.0, 1.0, size=(modes, dim))
    out = np.zeros((len(times), dim))
    for k, row in enumerate(coeff, start=1):
        out += np.sin(k * phase)[:, None] * row[None, :]
    return out


def check_operator_identity(tolerances=None, n_fields: int = 20, seed: int = 7,
                            system_names=None):
    """Direct h-computation of the deviation operator against the g-expressed
    formula, random deviation fields on every built-in system."""
    tol = {**DEFAULT_TOLERANCES, **(tolerances or {})}
    results = []
    for ctx in _contexts(system_names):
        rng = np.random.default_rng(seed)
        traj = ctx.padded_traj
        core = ctx.core()
        worst = 0.0
        for _ in range(n_fields):
            v = _random_field(rng, traj.times, traj.dim)
            dv = cov_derivative_along(ctx.sys.metric, traj.as_curve(), v,
                                      order=4, gammas=ctx.padded_cache.gamma)
            dev = DeviationField(traj, v, dv)
            lhs = jacobi_operator_direct(ctx.jm, ctx.padded_geo, v, cache=ctx.padded_h_cache)
            rhs = jacobi_operator_via_g(ctx.sys, ctx.E, traj, dev,
                                        cache=ctx.padded_cache, jm=ctx.jm)
            worst = max(worst, float(np.max(np.abs((lhs - rhs)[core]))))
        results.append(_result(f"operator-identity-{ctx.setup.name}", worst,
                               tol["operator-identity"], fields=n_fields, seed=seed,
                               step=ctx.setup.step))
    return results


def check_equal_energy(tolerances=None):
    """Equal-energy restriction of the operator relation on the harmonic
    radial case: the identity holds and its correction term stays large."""
    tol = {**DEFAULT_TOLERANCES, **(tolerances or {})}
    su = builtin_setup("flat-harmonic")
    pad = 10 * su.step
    t0 = -pad
    q0 = np.array([np.cos(t0), np.sin(t0)])
    v0 = np.array([-np.sin(t0), np.cos(t0)])
    traj = integrate_newton(su.system, q0, v0, (t0, 2.0 * np.pi + pad), su.step)
    vperp = np.sin(traj.times)[:, None] * traj.points   # radial field on the circle
    dev = equal_energy_projection(su.system, traj, vperp)
    rep = relation_equal_energy(su.system, su.energy, traj, dev)
    return [
        _result("equal-energy-constraint", rep["constraint_sup"],
                tol["equal-energy-constraint"]),
        _result("equal-energy-identity", rep["sup_norm"],
                tol["equal-energy-identity"]),
        _result("equal-energy-correction", rep["correction_sup"],
                tol["equal-energy-correction-min"], comparison=">"),
    ]


def check_theorems(tolerances=None, n_variations: int = 10, seed: int = 11,
                   system_names=None):
    """Free-action and length identities over seeded proper variations."""
    from .variation import FunctionalReport, theorem1_residual

    tol = {**DEFAULT_TOLERANCES, **(tolerances or {})}
    worst1 = worst2 = worst_orth = worst_path = 0.0
    int_min = np.inf
    reports = []
    for ctx in _contexts(system_names):
        for k in range(n_variations):
            var = make_proper_variation(ctx.traj, modes=3, seed=seed + k)
            t1 = theorem1_residual(ctx.sys, ctx.E, ctx.traj, var,
                                   cache=ctx.cache, jm=ctx.jm, h_cache=ctx.h_cache)
            t2 = theorem2_residual(ctx.sys, ctx.E, ctx.traj, var,
                                   cache=ctx.cache, jm=ctx.jm, h_cache=ctx.h_cache)
            ovar = make_proper_variation(ctx.traj, modes=3, seed=seed + 1000 + k,
                                         orthogonal=True, sys=ctx.sys, cache=ctx.cache)
            orth = orthogonal_identity_residual(ctx.sys, ctx.E, ctx.traj, ovar,
                                                cache=ctx.cache, jm=ctx.jm,
                                                h_cache=ctx.h_cache)
            worst1 = max(worst1, t1["residual"])
            worst2 = max(worst2, t2["residual"])
            worst_orth = max(worst_orth, orth["residual"])
            worst_path = max(worst_path, orth["pathway_delta"])
            int_min = min(int_min, t2["integrand_min"])
            reports.append(FunctionalReport(
                system=ctx.sys.name, E=ctx.E, seed=seed + k,
                d2S=t1["d2S"], d2S0J=t1["lhs"], d2LJ=t2["lhs"],
                thm1_correction=t1["correction"], thm2_correction=t2["correction"],
                thm1_residual=t1["residual"], thm2_residual=t2["residual"],
                orth_residual=orth["residual"], grid_size=len(ctx.traj),
                step=ctx.traj.step))
    return [
        _result("theorem1", worst1, tol["theorem1"], variations=n_variations, seed=seed),
        _result("theorem2", worst2, tol["theorem2"], variations=n_variations, seed=seed),
        _result("theorem2-integrand", int_min, tol["theorem2-integrand-min"],
                comparison=">"),
        _result("orthogonal-identity", max(worst_orth, worst_path),
                tol["orthogonal-identity"], pathway_delta=worst_path),
    ], reports


def check_conjugate_point(tolerances=None):
    """First conjugate point of the unit-sphere equator at arc length pi."""
    tol = {**DEFAULT_TOLERANCES, **(tolerances or {})}
    su = builtin_setup("sphere-free")
    sys_ = su.system
    traj = integrate_newton(sys_, su.q0, su.v0, (0.0, 3.5), su.step)
    dev = integrate_deviation(sys_, traj, np.zeros(2), np.array([1.0, 0.0]))
    comp = CubicSpline(traj.times, dev.V[:, 0])
    zero = brentq(comp, 2.9, 3.3)
    arc_err = abs(zero - np.pi)

    traj_pi = integrate_newton(sys_, su.q0, su.v0, (0.0, np.pi), su.step)
    var = make_proper_variation(traj_pi, coefficients=[[1.0, 0.0]])
    value = abs(second_variation_LJ(sys_, su.energy, traj_pi, var))
    return [
        _result("conjugate-point-arc", arc_err, tol["conjugate-point-arc"],
                first_zero=zero),
        _result("conjugate-point-functional", value, tol["conjugate-point-value"]),
    ]


def check_linearization(tolerances=None, alpha: float = 1e-4, seed: int = 3,
                        system_names=None):
    """Linearized flow against the central-difference oracle of the full flow."""
    tol = {**DEFAULT_TOLERANCES, **(tolerances or {})}
    rng = np.random.default_rng(seed)
    results = []
    for ctx in _contexts(system_names):
        su = ctx.setup
        dq = rng.uniform(-1.0, 1.0, su.system.metric.dim)
        dv = rng.uniform(-1.0, 1.0, su.system.metric.dim)
        oracle = brute_force_deviation(su.system, su.q0, su.v0, dq, dv,
                                       alpha, su.t_span, su.step)
        v0, dv0 = linearization_initial_data(su.system, su.q0, su.v0, dq, dv)
        lin = integrate_deviation(su.system, oracle.trajectory, v0, dv0)
        sup = float(np.max(np.abs(oracle.V - lin.V)))
        results.append(_result(f"linearization-{su.name}", sup, tol["linearization"],
                               alpha=alpha, seed=seed))
    return results


def check_energy_drift(tolerances=None, n_steps: int = 1000, step: float = 1e-3,
                       system_names=None):
    """Relative energy drift over a thousand RK4 steps."""
    tol = {**DEFAULT_TOLERANCES, **(tolerances or {})}
    results = []
    setups = all_setups() if system_names is None else [builtin_setup(n) for n in system_names]
    for su in setups:
        traj = integrate_newton(su.system, su.q0, su.v0,
                                (su.t_span[0], su.t_span[0] + n_steps * step), step)
        drift = max(abs(su.system.energy(q, v) - traj.energy)
                    for q, v in zip(traj.points[::25], traj.velocities[::25]))
        drift_rel = drift / max(1.0, abs(traj.energy))
        results.append(_result(f"energy-drift-{su.name}", drift_rel, tol["energy-drift"],
                               steps=n_steps, step=step))
    return results


def check_action_consistency(tolerances=None, seed: int = 5, xi: float = 3e-4,
                             system_names=None):
    """Quadrature d2S against a central second difference of the action.

    The displacement is kept small (and the variation amplitude modest) so
    the oracle's own O(xi^2) truncation stays below the comparison
    tolerance even on the hyperbolic chart, where fourth derivatives of
    the displaced action are large.
    """
    tol = {**DEFAULT_TOLERANCES, **(tolerances or {})}
    results = []
    for ctx in _contexts(system_names):
        var = make_proper_variation(ctx.traj, modes=3, seed=seed, amplitude=0.5)
        quad = second_variation_S(ctx.sys, ctx.traj, var, cache=ctx.cache)
        brute = action_second_difference(ctx.sys, ctx.traj, var, xi=xi)
        results.append(_result(f"action-consistency-{ctx.setup.name}",
                               abs(quad - brute), tol["action-consistency"],
                               d2S=quad, oracle=brute, xi=xi))
    return results


def run_verification(tolerances=None, fault: Optional[str] = None,
                     checks=None, system_names=None):
    """Run the named checks (default: all) and return their results."""
    available = {
        "lemmas": lambda: check_lemma_suite(tolerances, fault=fault),
        "roundtrip": lambda: check_roundtrip(tolerances),
        "operator-identity": lambda: check_operator_identity(tolerances,
                                                             system_names=system_names),
        "equal-energy": lambda: check_equal_energy(tolerances),
        "theorems": lambda: check_theorems(tolerances, system_names=system_names)[0],
        "conjugate-point": lambda: check_conjugate_point(tolerances),
        "linearization": lambda: check_linearization(tolerances,
                                                     system_names=system_names),
        "energy-drift": lambda: check_energy_drift(tolerances,
                                                   system_names=system_names),
        "action-consistency": lambda: check_action_consistency(tolerances,
                                                               system_names=system_names),
    }
    names = checks or list(available)
    results = []
    for name in names:
        if name not in available:
            raise ValueError(f"unknown check '{name}' (choose from {sorted(available)})")
        results.extend(available[name]())
    return results
