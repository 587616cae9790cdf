"""Newtonian dynamics on a chart and the linearized stability operator.

The trajectory stability operator acting on a field V along a solution is

    op(V) = nabla_dot nabla_dot V + K_dot(V) + nabla_V grad U

where ``K_dot(V) = R(qdot, V) qdot``.  Solutions of ``op(V) = 0`` describe
the first-order separation of neighbouring trajectories; an independent
brute-force oracle differentiates perturbed nonlinear runs instead.
"""

from __future__ import annotations

import json
import os
import tempfile
from dataclasses import dataclass
from functools import cached_property
from typing import Callable, Optional

import numpy as np
from scipy.interpolate import CubicSpline

from .errors import ChartDomainError, EnergyDriftError
from .geometry import (ChartMetric, SampledCurve, ScalarField, christoffel,
                       christoffel_along, cov_derivative_along, hessian_form,
                       riemann)

@dataclass(frozen=True)
class MechanicalSystem:
    """Metric plus potential; derivative evaluators of U are optional."""

    metric: ChartMetric
    U: Callable[[np.ndarray], float]
    dU: Optional[Callable[[np.ndarray], np.ndarray]] = None
    d2U: Optional[Callable[[np.ndarray], np.ndarray]] = None
    name: str = ""

    @cached_property
    def potential(self) -> ScalarField:
        return ScalarField(value=self.U, partials=self.dU, second_partials=self.d2U,
                           fd_step=self.metric.fd_step, fd_step2=self.metric.fd_step2)

    def energy(self, q, v) -> float:
        q = np.asarray(q, dtype=float)
        v = np.asarray(v, dtype=float)
        return 0.5 * float(v @ self.metric.g(q) @ v) + self.potential(q)

    def grad_potential(self, q) -> np.ndarray:
        """Raised gradient components ``g^{ij} d_j U``."""
        q = np.asarray(q, dtype=float)
        return self.metric.g_inv(q) @ self.potential.grad_components(q)

    def hess_potential_raised(self, q) -> np.ndarray:
        """Matrix ``A^i_l`` with ``(nabla_V grad U)^i = A^i_l V^l``."""
        q = np.asarray(q, dtype=float)
        return self.metric.g_inv(q) @ hessian_form(self.metric, self.potential, q)

    def acceleration(self, q, v) -> np.ndarray:
        gam = christoffel(self.metric, q)
        return -np.einsum('ijk,j,k->i', gam, v, v) - self.grad_potential(q)


def energy_of(sys: MechanicalSystem, q, v) -> float:
    """Mechanical energy ``(1/2) g_ij v^i v^j + U(q)``."""
    return sys.energy(q, v)


@dataclass(frozen=True)
class Trajectory:
    """Time-sampled solution of the equations of motion."""

    times: np.ndarray
    points: np.ndarray
    velocities: np.ndarray
    energy: float
    step: float

    def __post_init__(self):
        object.__setattr__(self, "times", np.asarray(self.times, dtype=float))
        object.__setattr__(self, "points", np.asarray(self.points, dtype=float))
        object.__setattr__(self, "velocities", np.asarray(self.velocities, dtype=float))

    def __len__(self):
        return len(self.times)

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def as_curve(self) -> SampledCurve:
        return SampledCurve(self.times, self.points, self.velocities)

    def to_dict(self) -> dict:
        return {"energy": self.energy, "step": self.step,
                "t_span": [float(self.times[0]), float(self.times[-1])],
                "samples": len(self.times), "dim": self.dim}

    def write_csv(self, path) -> None:
        n = self.dim
        header = (["t"] + [f"q{i+1}" for i in range(n)] + [f"v{i+1}" for i in range(n)])
        rows = np.hstack([self.times[:, None], self.points, self.velocities])
        _write_csv_atomic(path, header, rows)

    def write_json(self, path) -> None:
        payload = self.to_dict()
        payload["t"] = self.times.tolist()
        payload["q"] = self.points.tolist()
        payload["v"] = self.velocities.tolist()
        _write_text_atomic(path, json.dumps(payload, indent=1))


@dataclass(frozen=True)
class DeviationField:
    """Vector field V along a trajectory with its covariant derivative samples."""

    trajectory: Trajectory
    V: np.ndarray
    DV: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "V", np.asarray(self.V, dtype=float))
        object.__setattr__(self, "DV", np.asarray(self.DV, dtype=float))
        if self.V.shape != self.trajectory.points.shape or self.DV.shape != self.V.shape:
            raise ValueError("deviation samples must match the trajectory grid")

    def write_csv(self, path) -> None:
        traj = self.trajectory
        n = traj.dim
        header = (["t"] + [f"q{i+1}" for i in range(n)] + [f"v{i+1}" for i in range(n)]
                  + [f"V{i+1}" for i in range(n)] + [f"DV{i+1}" for i in range(n)])
        rows = np.hstack([traj.times[:, None], traj.points, traj.velocities, self.V, self.DV])
        _write_csv_atomic(path, header, rows)


def _write_text_atomic(path, text: str) -> None:
    path = os.fspath(path)
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _write_csv_atomic(path, header, rows) -> None:
    lines = [",".join(header)]
    for row in np.asarray(rows, dtype=float):
        lines.append(",".join(format(x, ".17g") for x in row))
    _write_text_atomic(path, "\n".join(lines) + "\n")


def _rk4(rhs, y0, t0, n_steps, h):
    """Classical fixed-step RK4; returns samples including y0."""
    out = np.empty((n_steps + 1,) + np.shape(y0))
    out[0] = y0
    y = np.asarray(y0, dtype=float)
    t = t0
    for k in range(n_steps):
        k1 = rhs(t, y)
        k2 = rhs(t + 0.5 * h, y + 0.5 * h * k1)
        k3 = rhs(t + 0.5 * h, y + 0.5 * h * k2)
        k4 = rhs(t + h, y + h * k3)
        y = y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        t = t0 + (k + 1) * h
        out[k + 1] = y
    return out


def integrate_newton(sys: MechanicalSystem, q0, v0, t_span, step,
                     drift_bound: float = 1e-6) -> Trajectory:
    """Fixed-step RK4 solution of the equations of motion.

    Halts with a chart-domain error if the solution leaves the chart and
    with an energy-drift error if the conserved energy moves by more than
    ``drift_bound`` (relative).
    """
    q0 = sys.metric.check_point(q0)
    v0 = np.asarray(v0, dtype=float)
    t0, t1 = float(t_span[0]), float(t_span[1])
    if step <= 0 or t1 <= t0:
        raise ValueError("need step > 0 and t_span[1] > t_span[0]")
    n_steps = max(1, int(round((t1 - t0) / step)))
    h = (t1 - t0) / n_steps
    e0 = sys.energy(q0, v0)
    n = q0.size

    def rhs(t, y):
        q, v = y[:n], y[n:]
        try:
            acc = sys.acceleration(q, v)
        except ChartDomainError as exc:
            raise ChartDomainError(f"left chart domain at t={t:.6g}") from exc
        return np.concatenate([v, acc])

    ys = _rk4(rhs, np.concatenate([q0, v0]), t0, n_steps, h)
    times = t0 + h * np.arange(n_steps + 1)
    points, velocities = ys[:, :n], ys[:, n:]
    for k in range(n_steps + 1):
        if not sys.metric.contains(points[k]):
            raise ChartDomainError(f"left chart domain at t={times[k]:.6g}")
        drift = abs(sys.energy(points[k], velocities[k]) - e0) / max(1.0, abs(e0))
        if drift > drift_bound:
            raise EnergyDriftError(
                f"energy drift {drift:.3e} exceeded bound {drift_bound:.3e} at t={times[k]:.6g}")
    return Trajectory(times, points, velocities, energy=e0, step=h)


class CurveGeometry:
    """Metric and potential data cached along a batch of points.

    Evaluating Christoffel symbols and curvature once per trajectory keeps
    repeated operator evaluations cheap.
    """

    def __init__(self, metric: ChartMetric, points, sys: Optional[MechanicalSystem] = None):
        self.metric = metric
        self.points = np.asarray(points, dtype=float)
        self.sys = sys

    @cached_property
    def g(self):
        return np.stack([self.metric.g(q) for q in self.points])

    @cached_property
    def g_inv(self):
        return np.stack([self.metric.g_inv(q) for q in self.points])

    @cached_property
    def gamma(self):
        return christoffel_along(self.metric, self.points)

    @cached_property
    def riem(self):
        return np.stack([riemann(self.metric, q) for q in self.points])

    @cached_property
    def grad_U(self):
        return np.stack([self.sys.grad_potential(q) for q in self.points])

    @cached_property
    def hess_U_raised(self):
        return np.stack([self.sys.hess_potential_raised(q) for q in self.points])

    @cached_property
    def U(self):
        return np.array([self.sys.potential(q) for q in self.points])


def _check_attached(traj: Trajectory, dev: DeviationField):
    if dev.trajectory is not traj:
        if (len(dev.trajectory) != len(traj)
                or not np.allclose(dev.trajectory.times, traj.times)):
            raise ValueError("mismatched sampling grids between trajectory and deviation field")


def hessian_operator(sys: MechanicalSystem, traj: Trajectory, dev: DeviationField,
                     cache: Optional[CurveGeometry] = None, order: int = 4) -> np.ndarray:
    """Evaluate the stability operator on a sampled deviation field.

    Returns ``nabla_dot DV + K_dot(V) + nabla_V grad U`` at every sample,
    using the stored ``DV`` (so only one layer of sampled differentiation
    happens here).
    """
    _check_attached(traj, dev)
    cache = cache or CurveGeometry(sys.metric, traj.points, sys)
    curve = traj.as_curve()
    term1 = cov_derivative_along(sys.metric, curve, dev.DV, order=order, gammas=cache.gamma)
    term2 = np.einsum('nlabc,na,nb,nc->nl', cache.riem, traj.velocities, dev.V, traj.velocities)
    term3 = np.einsum('nij,nj->ni', cache.hess_U_raised, dev.V)
    return term1 + term2 + term3


def _component_splines(times, arrays):
    """Cubic interpolation of sampled tensor components along the trajectory."""
    flat = arrays.reshape(len(times), -1)
    spline = CubicSpline(times, flat, axis=0)
    shape = arrays.shape[1:]

    def at(t):
        return spline(t).reshape(shape)

    return at


def integrate_deviation(sys: MechanicalSystem, traj: Trajectory, V0, DV0,
                        cache: Optional[CurveGeometry] = None) -> DeviationField:
    """Integrate the linearized flow ``op(V) = 0`` along a stored trajectory.

    The first-order system in ``(V, W = nabla_dot V)`` is advanced by RK4
    with the trajectory's own step; Christoffel, curvature and potential
    coefficients are cubic-interpolated between the stored samples.
    """
    cache = cache or CurveGeometry(sys.metric, traj.points, sys)
    times = traj.times
    n = traj.dim
    gamma_at = _component_splines(times, cache.gamma)
    riem_at = _component_splines(times, cache.riem)
    hess_at = _component_splines(times, cache.hess_U_raised)
    vel_spline = CubicSpline(times, traj.velocities, axis=0)

    def rhs(t, y):
        V, W = y[:n], y[n:]
        gam = gamma_at(t)
        vel = vel_spline(t)
        dV = W - np.einsum('ijk,j,k->i', gam, vel, V)
        curv = np.einsum('labc,a,b,c->l', riem_at(t), vel, V, vel)
        force = hess_at(t) @ V
        dW = -curv - force - np.einsum('ijk,j,k->i', gam, vel, W)
        return np.concatenate([dV, dW])

    y0 = np.concatenate([np.asarray(V0, dtype=float), np.asarray(DV0, dtype=float)])
    ys = _rk4(rhs, y0, times[0], len(times) - 1, traj.step)
    return DeviationField(traj, ys[:, :n], ys[:, n:])


def brute_force_deviation(sys: MechanicalSystem, q0, v0, dq, dv, alpha,
                          t_span, step) -> DeviationField:
    """Deviation field by central differencing of perturbed nonlinear runs.

    Integrates the full equations from ``(q0 ± alpha*dq, v0 ± alpha*dv)``
    and returns ``(γ_+ - γ_-) / (2 alpha)`` sampled on the base grid.  This
    is the independent oracle for :func:`integrate_deviation`; the matching
    initial data there are ``V0 = dq`` and
    ``DV0 = dv + Γ(q0)(v0, dq)``.
    """
    q0 = np.asarray(q0, dtype=float)
    v0 = np.asarray(v0, dtype=float)
    dq = np.asarray(dq, dtype=float)
    dv = np.asarray(dv, dtype=float)
    base = integrate_newton(sys, q0, v0, t_span, step)
    plus = integrate_newton(sys, q0 + alpha * dq, v0 + alpha * dv, t_span, step)
    minus = integrate_newton(sys, q0 - alpha * dq, v0 - alpha * dv, t_span, step)
    V = (plus.points - minus.points) / (2.0 * alpha)
    DV = cov_derivative_along(sys.metric, base.as_curve(), V, order=2)
    return DeviationField(base, V, DV)


def linearization_initial_data(sys: MechanicalSystem, q0, v0, dq, dv):
    """Initial ``(V0, DV0)`` of the linearized flow matching a perturbation of
    initial conditions by ``(dq, dv)``."""
    gam = christoffel(sys.metric, q0)
    dq = np.asarray(dq, dtype=float)
    dv = np.asarray(dv, dtype=float)
    return dq, dv + np.einsum('ijk,j,k->i', gam, np.asarray(v0, dtype=float), dq)
