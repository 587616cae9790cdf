"""Jacobi-metric construction and geodesic-deviation machinery.

For a mechanical system with metric g, potential U and fixed energy E the
Jacobi metric is the conformal rescaling ``h = 2(E - U) g``.  Its
geodesics, traversed at unit h-speed, reproduce the trajectories of
energy E after the reparametrization ``ds/dt = 2(E - U)``.  This module
integrates those geodesics, converts between the two parameters, and
evaluates the geodesic-deviation operator of h in two independent ways:
directly from h-quantities, and through the g-expressed formula

    devop(V) = (2(E-U))^-2 [ op(V) - d/dt(<V, grad U>/(E-U)) qdot
                             + (<grad U, V> + <qdot, nabla_dot V>)/(E-U) grad U ]

valid along solutions of the equations of motion.  Restricted to
equal-energy variations the last term drops, and the middle term is the
piece that survives: the two stability operators never coincide.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional

import numpy as np
from scipy.integrate import solve_ivp
from scipy.interpolate import CubicSpline, PchipInterpolator

from .conformal import ConformalFactor, conformal_rescale
from .dynamics import (CurveGeometry, DeviationField, MechanicalSystem,
                       Trajectory, _rk4, hessian_operator, integrate_newton)
from .errors import ChartDomainError, ForbiddenRegionError
from .geometry import ChartMetric, SampledCurve, christoffel, cov_derivative_along
from .numdiff import cumulative_simpson, local_derivative


@dataclass(frozen=True)
class JacobiMetric:
    """Conformally rescaled metric ``h = 2(E - U) g`` at fixed energy."""

    system: MechanicalSystem
    E: float
    margin: float
    factor: ConformalFactor
    h: ChartMetric

    def clearance(self, p) -> float:
        """E - U at a point."""
        return self.E - self.system.potential(np.asarray(p, dtype=float))

    def check_clear(self, p) -> None:
        c = self.clearance(p)
        if not np.isfinite(c) or c <= self.margin:
            raise ForbiddenRegionError(
                f"forbidden region: E - U = {c:.3e} <= margin {self.margin:.3e} "
                f"at {np.asarray(p).tolist()}")

    def factor_values(self, points) -> np.ndarray:
        """``2 (E - U)`` sampled along a batch of points, margin enforced."""
        points = np.atleast_2d(np.asarray(points, dtype=float))
        w = np.array([self.clearance(q) for q in points])
        bad = np.nonzero(w <= self.margin)[0]
        if bad.size:
            raise ForbiddenRegionError(
                f"forbidden region: E - U = {w[bad[0]]:.3e} <= margin "
                f"{self.margin:.3e} at sample {int(bad[0])}")
        return 2.0 * w


def jacobi_metric(sys: MechanicalSystem, E: float, margin: Optional[float] = None) -> JacobiMetric:
    """Build the Jacobi metric of a system at energy E.

    The chart domain of h additionally requires ``E - U > margin``
    (default ``1e-6 * |E|``); the conformal factor is exposed so the
    rescaling formulas can be applied to it directly.
    """
    if margin is None:
        margin = 1e-6 * max(abs(E), 1e-6)
    pot = sys.potential

    def f(p):
        return 2.0 * (E - pot(p))

    df = None if sys.dU is None else (lambda p: -2.0 * np.asarray(sys.dU(p), dtype=float))
    d2f = None if sys.d2U is None else (lambda p: -2.0 * np.asarray(sys.d2U(p), dtype=float))
    factor = ConformalFactor(f=f, df=df, d2f=d2f,
                             fd_step=sys.metric.fd_step, fd_step2=sys.metric.fd_step2)

    def guard(p):
        return (E - pot(p)) > margin

    h = conformal_rescale(sys.metric, factor, extra_guard=guard,
                          name=f"jacobi({sys.name or sys.metric.name})")
    return JacobiMetric(system=sys, E=float(E), margin=float(margin), factor=factor, h=h)


@dataclass(frozen=True)
class GeodesicRecord:
    """Arc-length samples of a Jacobi-metric geodesic.

    ``t_of_s`` pairs every arc-length sample with the dynamical time
    accumulated through ``dt/ds = 1 / (2(E-U))``.
    """

    s: np.ndarray
    points: np.ndarray
    tangents: np.ndarray
    t_of_s: np.ndarray
    truncated: bool = False
    dense: object = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "s", np.asarray(self.s, dtype=float))
        object.__setattr__(self, "points", np.asarray(self.points, dtype=float))
        object.__setattr__(self, "tangents", np.asarray(self.tangents, dtype=float))
        object.__setattr__(self, "t_of_s", np.asarray(self.t_of_s, dtype=float))

    def __len__(self):
        return len(self.s)

    def as_curve(self) -> SampledCurve:
        return SampledCurve(self.s, self.points, self.tangents)


def integrate_geodesic(jm: JacobiMetric, q0, dir0, s_span, step,
                       method: str = "rk4", rtol: float = 1e-10,
                       atol: float = 1e-12) -> GeodesicRecord:
    """Integrate the geodesic equation of h from a point and direction.

    ``dir0`` is normalized to unit h-length; dynamical time is accumulated
    alongside.  The fixed-step RK4 path is the default; ``method="rk45"``
    uses an adaptive solver with dense output, which is the right tool
    near turning points where the h-Christoffel symbols blow up.  Reaching
    the forbidden region truncates the record and sets the flag rather
    than raising.
    """
    q0 = jm.h.check_point(q0)
    jm.check_clear(q0)
    dir0 = np.asarray(dir0, dtype=float)
    nrm = jm.h.norm(q0, dir0)
    if nrm <= 0.0:
        raise ValueError("dir0 must be nonzero")
    u0 = dir0 / nrm
    s0, s1 = float(s_span[0]), float(s_span[1])
    n = q0.size
    y0 = np.concatenate([q0, u0, [0.0]])

    def rhs(s, y):
        q, u = y[:n], y[n:2 * n]
        gam = christoffel(jm.h, q)
        acc = -np.einsum('ijk,j,k->i', gam, u, u)
        return np.concatenate([u, acc, [0.5 / jm.clearance(q)]])

    if method == "rk45":
        def clear_event(s, y):
            return jm.clearance(y[:n]) - jm.margin

        clear_event.terminal = True
        clear_event.direction = -1
        sol = solve_ivp(rhs, (s0, s1), y0, method="RK45", rtol=rtol, atol=atol,
                        dense_output=True, events=clear_event)
        s_end = float(sol.t[-1])
        truncated = sol.status == 1
        n_samples = max(2, int(round((s_end - s0) / step)) + 1)
        s = np.linspace(s0, s_end, n_samples)
        ys = sol.sol(s).T
        return GeodesicRecord(s, ys[:, :n], ys[:, n:2 * n], ys[:, 2 * n],
                              truncated=truncated, dense=sol)

    n_steps = max(1, int(round((s1 - s0) / step)))
    h = (s1 - s0) / n_steps
    ss = [s0]
    rows = [y0]
    y = y0
    truncated = False
    for k in range(n_steps):
        s = s0 + k * h
        try:
            k1 = rhs(s, y)
            k2 = rhs(s + 0.5 * h, y + 0.5 * h * k1)
            k3 = rhs(s + 0.5 * h, y + 0.5 * h * k2)
            k4 = rhs(s + h, y + h * k3)
            y_new = y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            jm.check_clear(y_new[:n])
        except (ForbiddenRegionError, ChartDomainError):
            truncated = True
            break
        y = y_new
        ss.append(s0 + (k + 1) * h)
        rows.append(y)
    rows = np.asarray(rows)
    return GeodesicRecord(np.asarray(ss), rows[:, :n], rows[:, n:2 * n],
                          rows[:, 2 * n], truncated=truncated)


@dataclass(frozen=True)
class ParameterMap:
    """Monotone pairing of dynamical time and arc length on a trajectory."""

    t: np.ndarray
    s: np.ndarray

    @cached_property
    def _s_of_t(self):
        return CubicSpline(self.t, self.s)

    @cached_property
    def _t_of_s(self):
        return CubicSpline(self.s, self.t)

    def s_at(self, t):
        return self._s_of_t(t)

    def t_at(self, s):
        return self._t_of_s(s)


def s_of_t(jm: JacobiMetric, traj: Trajectory) -> ParameterMap:
    """Arc length along a trajectory, ``s(t) = ∫ 2(E - U) dτ`` by Simpson.

    The trajectory's energy must match the Jacobi metric's to 1e-10.
    """
    if abs(traj.energy - jm.E) > 1e-10:
        raise ValueError(f"energy mismatch: trajectory E={traj.energy!r}, metric E={jm.E!r}")
    w2 = jm.factor_values(traj.points)
    s = cumulative_simpson(w2, traj.times)
    return ParameterMap(t=traj.times.copy(), s=s)


def geodesic_from_trajectory(jm: JacobiMetric, traj: Trajectory) -> GeodesicRecord:
    """View a trajectory as an h-geodesic record on its induced s-grid.

    Points are shared; only the parameter changes, with
    ``γ' = qdot / (2(E-U))`` exact at every sample.
    """
    pm = s_of_t(jm, traj)
    w2 = jm.factor_values(traj.points)
    return GeodesicRecord(pm.s, traj.points, traj.velocities / w2[:, None],
                          traj.times.copy())


def jacobi_operator_direct(jm: JacobiMetric, geo: GeodesicRecord, dev,
                           cache: Optional[CurveGeometry] = None) -> np.ndarray:
    """Geodesic-deviation operator of h evaluated purely with h-quantities.

    Returns ``nabla'_h nabla'_h V + K^h(V)`` on the record's s-grid for a
    sampled field V.
    """
    dev = np.asarray(dev, dtype=float)
    if dev.shape != geo.points.shape:
        raise ValueError("grid mismatch: deviation samples must match the geodesic record")
    cache = cache or CurveGeometry(jm.h, geo.points)
    curve = geo.as_curve()
    w1 = cov_derivative_along(jm.h, curve, dev, order=4, gammas=cache.gamma)
    w2 = cov_derivative_along(jm.h, curve, w1, order=4, gammas=cache.gamma)
    curv = np.einsum('nlabc,na,nb,nc->nl', cache.riem, geo.tangents, dev, geo.tangents)
    return w2 + curv


def jacobi_operator_via_g(sys: MechanicalSystem, E: float, traj: Trajectory,
                          dev: DeviationField,
                          cache: Optional[CurveGeometry] = None,
                          jm: Optional[JacobiMetric] = None) -> np.ndarray:
    """Geodesic-deviation operator of h expressed through g and t-quantities.

    Valid along solutions of energy E; the time derivative in the middle
    term is taken by central differencing of the sampled scalar.
    """
    jm = jm or jacobi_metric(sys, E)
    if abs(traj.energy - E) > 1e-10:
        raise ValueError(f"energy mismatch: trajectory E={traj.energy!r} vs {E!r}")
    cache = cache or CurveGeometry(sys.metric, traj.points, sys)
    w = 0.5 * jm.factor_values(traj.points)          # E - U, margin enforced
    delta_v = hessian_operator(sys, traj, dev, cache=cache, order=4)
    grad_u = cache.grad_U
    v_dot_gu = np.einsum('nij,ni,nj->n', cache.g, dev.V, grad_u)
    qdot_dv = np.einsum('nij,ni,nj->n', cache.g, traj.velocities, dev.DV)
    dscal = local_derivative(traj.times, v_dot_gu / w, m=1, width=7)
    out = (delta_v - dscal[:, None] * traj.velocities
           + ((v_dot_gu + qdot_dv) / w)[:, None] * grad_u)
    return out / (2.0 * w[:, None]) ** 2


def equal_energy_projection(sys: MechanicalSystem, traj: Trajectory, vperp,
                            cache: Optional[CurveGeometry] = None,
                            orth_tol: float = 1e-8) -> DeviationField:
    """Complete an orthogonal field to an equal-energy variation.

    Solves for the tangential component ``V = Vperp + lam(t) qdot`` with
    ``lam(t0) = 0`` such that the perturbed family keeps its mechanical
    energy to first order, i.e. ``<qdot, nabla_dot V> + <grad U, V> = 0``
    pointwise.  Substituting the ansatz, the multiplier obeys the scalar
    linear equation

        lam' = -(<qdot, nabla_dot Vperp> + <grad U, Vperp>) / (2 (E - U)),

    integrated here by RK4 on the trajectory grid.
    """
    vperp = np.asarray(vperp, dtype=float)
    if vperp.shape != traj.points.shape:
        raise ValueError("grid mismatch: orthogonal field must match the trajectory grid")
    cache = cache or CurveGeometry(sys.metric, traj.points, sys)
    speed2 = np.einsum('nij,ni,nj->n', cache.g, traj.velocities, traj.velocities)
    if np.min(speed2) <= 1e-12:
        raise ForbiddenRegionError("turning point on interval: |qdot| vanishes")
    orth = np.einsum('nij,ni,nj->n', cache.g, traj.velocities, vperp)
    scale = max(1.0, float(np.max(np.abs(vperp))))
    if np.max(np.abs(orth)) > orth_tol * scale:
        raise ValueError("input field is not orthogonal to the velocity")

    dvperp = cov_derivative_along(sys.metric, traj.as_curve(), vperp,
                                  order=4, gammas=cache.gamma)
    num = (np.einsum('nij,ni,nj->n', cache.g, traj.velocities, dvperp)
           + np.einsum('nij,ni,nj->n', cache.g, cache.grad_U, vperp))
    lam_rate = -num / speed2
    rate = CubicSpline(traj.times, lam_rate)
    lam = _rk4(lambda t, y: np.atleast_1d(rate(t)), np.zeros(1),
               traj.times[0], len(traj) - 1, traj.step)[:, 0]

    v = vperp + lam[:, None] * traj.velocities
    dv = dvperp + lam_rate[:, None] * traj.velocities - lam[:, None] * cache.grad_U
    return DeviationField(traj, v, dv)


def relation_equal_energy(sys: MechanicalSystem, E: float, traj: Trajectory,
                          dev: DeviationField,
                          constraint_tol: float = 1e-6,
                          jm: Optional[JacobiMetric] = None,
                          cache: Optional[CurveGeometry] = None,
                          h_cache: Optional[CurveGeometry] = None) -> dict:
    """Check the equal-energy operator relation and size its correction term.

    Both sides are evaluated independently: the deviation operator of h by
    direct h-computation on the s-grid, and the right-hand side

        (2(E-U))^-2 [ op(V) - d/dt(<V, grad U>/(E-U)) qdot ]

    through g-quantities.  The report carries the residual and the
    sup-norm of the surviving correction term, which quantifies how far
    the two stability operators stay apart even for equal-energy
    variations.
    """
    jm = jm or jacobi_metric(sys, E)
    cache = cache or CurveGeometry(sys.metric, traj.points, sys)
    w = 0.5 * jm.factor_values(traj.points)
    constraint = (np.einsum('nij,ni,nj->n', cache.g, traj.velocities, dev.DV)
                  + np.einsum('nij,ni,nj->n', cache.g, cache.grad_U, dev.V))
    if np.max(np.abs(constraint)) > constraint_tol:
        raise ValueError(
            f"equal-energy constraint violated: max residual {np.max(np.abs(constraint)):.3e}")

    geo = geodesic_from_trajectory(jm, traj)
    lhs = jacobi_operator_direct(jm, geo, dev.V, cache=h_cache)

    delta_v = hessian_operator(sys, traj, dev, cache=cache, order=4)
    v_dot_gu = np.einsum('nij,ni,nj->n', cache.g, dev.V, cache.grad_U)
    dscal = local_derivative(traj.times, v_dot_gu / w, m=1, width=7)
    correction = -dscal[:, None] * traj.velocities / (2.0 * w[:, None]) ** 2
    rhs = delta_v / (2.0 * w[:, None]) ** 2 + correction

    return {
        "system": sys.name,
        "E": E,
        "t_span": [float(traj.times[0]), float(traj.times[-1])],
        "step": traj.step,
        "quantity": "equal-energy operator relation",
        "sup_norm": float(np.max(np.abs(lhs - rhs))),
        "correction_sup": float(np.max(np.abs(correction))),
        "constraint_sup": float(np.max(np.abs(constraint))),
        "grid_size": len(traj),
        "seed": None,
    }


def _geodesic_positions_at_times(jm: JacobiMetric, geo: GeodesicRecord, times):
    """Positions of a geodesic record at given dynamical times.

    With dense output available, inverts t(s) by vectorized Newton steps
    (ds = dt * 2(E-U)); otherwise by monotone interpolation of the
    recorded pairing.
    """
    times = np.asarray(times, dtype=float)
    n = geo.points.shape[1]
    if geo.dense is not None:
        sol = geo.dense.sol
        s = PchipInterpolator(geo.t_of_s, geo.s)(times)
        s = np.clip(s, geo.s[0], geo.s[-1])
        for _ in range(6):
            ys = sol(s)
            t_err = ys[2 * n] - times
            w2 = np.array([2.0 * jm.clearance(q) for q in ys[:n].T])
            s = np.clip(s - t_err * w2, geo.s[0], geo.s[-1])
        return sol(s)[:n].T
    s = PchipInterpolator(geo.t_of_s, geo.s)(times)
    return CubicSpline(geo.s, geo.points, axis=0)(s)


def maupertuis_roundtrip(sys: MechanicalSystem, E: float, q0, v0, t_span,
                         step: float = 1e-3, geodesic_method: str = "rk45",
                         drift_bound: float = 1e-6) -> dict:
    """Compare the trajectory with the reparametrized h-geodesic.

    Integrates the equations of motion and, independently, the geodesic of
    ``h = 2(E - U) g`` from the same point and direction; maps the geodesic
    back to dynamical time through its own accumulated t(s) and reports
    the sup-norm position discrepancy.
    """
    e0 = sys.energy(q0, v0)
    if abs(e0 - E) > 1e-10:
        raise ValueError(f"energy mismatch: initial data give E={e0!r}, requested {E!r}")
    jm = jacobi_metric(sys, E)
    traj = integrate_newton(sys, q0, v0, t_span, step, drift_bound=drift_bound)
    pm = s_of_t(jm, traj)
    geo = integrate_geodesic(jm, q0, v0, (0.0, float(pm.s[-1])), step,
                             method=geodesic_method)
    t_max = float(geo.t_of_s[-1])
    mask = traj.times <= t_max + 1e-12
    pos = _geodesic_positions_at_times(jm, geo, traj.times[mask])
    sup = float(np.max(np.abs(pos - traj.points[mask])))
    return {
        "system": sys.name,
        "E": E,
        "t_span": [float(t_span[0]), float(t_span[1])],
        "step": step,
        "quantity": "maupertuis roundtrip",
        "sup_norm": sup,
        "grid_size": int(np.sum(mask)),
        "seed": None,
        "geodesic_method": geodesic_method,
        "truncated": geo.truncated,
    }
