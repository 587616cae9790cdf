import json

import numpy as np
import pytest

from jacobistab.dynamics import (DeviationField, brute_force_deviation,
                                 energy_of, hessian_operator,
                                 integrate_deviation, integrate_newton,
                                 linearization_initial_data)
from jacobistab.errors import ChartDomainError, EnergyDriftError
from jacobistab.geometry import cov_derivative_along
from jacobistab.systems import builtin_setup

FREE = builtin_setup("flat-free")
HARMONIC = builtin_setup("flat-harmonic")
SPHERE_FREE = builtin_setup("sphere-free")


class TestIntegrateNewton:
    def test_free_particle_straight_line(self):
        traj = integrate_newton(FREE.system, [0.0, 0.0], [1.0, 0.0], (0.0, 1.0), 1e-3)
        assert np.max(np.abs(traj.points[:, 0] - traj.times)) < 1e-12
        assert np.max(np.abs(traj.points[:, 1])) < 1e-12

    def test_harmonic_circular_orbit(self):
        traj = integrate_newton(HARMONIC.system, [1.0, 0.0], [0.0, 1.0],
                                (0.0, 2 * np.pi), 1e-3)
        want = np.stack([np.cos(traj.times), np.sin(traj.times)], axis=1)
        assert np.max(np.abs(traj.points - want)) < 1e-10
        assert traj.energy == pytest.approx(1.0)

    def test_equator_great_circle(self):
        traj = integrate_newton(SPHERE_FREE.system, [np.pi / 2, 0.0], [0.0, 1.0],
                                (0.0, 2.0), 1e-3)
        assert np.max(np.abs(traj.points[:, 0] - np.pi / 2)) < 1e-12
        assert np.max(np.abs(traj.points[:, 1] - traj.times)) < 1e-10

    def test_domain_exit_raises(self):
        # meridian great circle runs into the chart boundary at the pole
        with pytest.raises(ChartDomainError, match="left chart domain"):
            integrate_newton(SPHERE_FREE.system, [np.pi / 2, 0.0], [1.0, 0.0],
                             (0.0, 2.0), 1e-3)

    def test_drift_bound_enforced(self):
        with pytest.raises(EnergyDriftError):
            integrate_newton(HARMONIC.system, [1.0, 0.0], [0.0, 1.0],
                             (0.0, 1.0), 1e-3, drift_bound=1e-18)

    def test_csv_and_json_roundtrip(self, tmp_path):
        traj = integrate_newton(FREE.system, [0.0, 0.0], [1.0, 0.0], (0.0, 0.1), 1e-2)
        traj.write_csv(tmp_path / "traj.csv")
        lines = (tmp_path / "traj.csv").read_text().splitlines()
        assert lines[0] == "t,q1,q2,v1,v2"
        assert len(lines) == len(traj) + 1
        traj.write_json(tmp_path / "traj.json")
        data = json.loads((tmp_path / "traj.json").read_text())
        assert data["energy"] == pytest.approx(0.5)
        assert len(data["t"]) == len(traj)


class TestEnergyOf:
    def test_flat_free(self):
        assert energy_of(FREE.system, [0.0, 0.0], [1.0, 0.0]) == pytest.approx(0.5)

    def test_flat_harmonic(self):
        assert energy_of(HARMONIC.system, [1.0, 0.0], [0.0, 1.0]) == pytest.approx(1.0)

    def test_sphere_with_potential(self):
        su = builtin_setup("sphere-cos")
        val = energy_of(su.system, [np.pi / 2, 0.0], [0.0, 1.0])
        # (1/2) sin^2(pi/2) * 1 + cos(pi/2)
        assert val == pytest.approx(0.5, abs=1e-14)


class TestHessianOperator:
    def test_flat_free_is_second_derivative(self):
        traj = integrate_newton(FREE.system, [0.0, 0.0], [1.0, 0.0], (0.0, np.pi), 1e-3)
        v = np.stack([np.zeros_like(traj.times), np.sin(traj.times)], axis=1)
        dv = np.stack([np.zeros_like(traj.times), np.cos(traj.times)], axis=1)
        out = hessian_operator(FREE.system, traj, DeviationField(traj, v, dv))
        want = np.stack([np.zeros_like(traj.times), -np.sin(traj.times)], axis=1)
        assert np.max(np.abs(out - want)) < 1e-8

    def test_flat_harmonic_adds_identity(self):
        traj = integrate_newton(HARMONIC.system, [1.0, 0.0], [0.0, 1.0], (0.0, 2.0), 1e-3)
        t = traj.times
        v = np.stack([np.sin(2 * t), np.cos(t)], axis=1)
        dv = np.stack([2 * np.cos(2 * t), -np.sin(t)], axis=1)
        out = hessian_operator(HARMONIC.system, traj, DeviationField(traj, v, dv))
        want = np.stack([-4 * np.sin(2 * t), -np.cos(t)], axis=1) + v
        assert np.max(np.abs(out - want)) < 1e-8

    def test_sphere_equator_curvature_term(self):
        traj = integrate_newton(SPHERE_FREE.system, [np.pi / 2, 0.0], [0.0, 1.0],
                                (0.0, 2.0), 1e-3)
        t = traj.times
        v = np.stack([np.sin(t), np.zeros_like(t)], axis=1)       # v(t) d_theta
        dv = np.stack([np.cos(t), np.zeros_like(t)], axis=1)
        out = hessian_operator(SPHERE_FREE.system, traj, DeviationField(traj, v, dv))
        want = np.zeros_like(v)                                   # (v'' + v) d_theta = 0
        assert np.max(np.abs(out - want)) < 1e-8

    def test_grid_mismatch_rejected(self):
        traj = integrate_newton(FREE.system, [0.0, 0.0], [1.0, 0.0], (0.0, 0.5), 1e-2)
        other = integrate_newton(FREE.system, [0.0, 0.0], [1.0, 0.0], (0.0, 0.5), 5e-3)
        dev = DeviationField(other, np.zeros_like(other.points), np.zeros_like(other.points))
        with pytest.raises(ValueError, match="mismatched sampling grids"):
            hessian_operator(FREE.system, traj, dev)


class TestIntegrateDeviation:
    def test_free_particle_linear_growth(self):
        traj = integrate_newton(FREE.system, [0.0, 0.0], [1.0, 0.0], (0.0, 2.0), 1e-3)
        dev = integrate_deviation(FREE.system, traj, [0.0, 0.0], [0.0, 1.0])
        want = np.stack([np.zeros_like(traj.times), traj.times], axis=1)
        assert np.max(np.abs(dev.V - want)) < 1e-10

    def test_harmonic_cosine(self):
        traj = integrate_newton(HARMONIC.system, [1.0, 0.0], [0.0, 1.0],
                                (0.0, 2 * np.pi), 1e-3)
        dev = integrate_deviation(HARMONIC.system, traj, [1.0, 0.0], [0.0, 0.0])
        want = np.stack([np.cos(traj.times), np.zeros_like(traj.times)], axis=1)
        assert np.max(np.abs(dev.V - want)) < 1e-9

    def test_sphere_jacobi_field_sine(self):
        traj = integrate_newton(SPHERE_FREE.system, [np.pi / 2, 0.0], [0.0, 1.0],
                                (0.0, np.pi), 1e-3)
        dev = integrate_deviation(SPHERE_FREE.system, traj, [0.0, 0.0], [1.0, 0.0])
        assert np.max(np.abs(dev.V[:, 0] - np.sin(traj.times))) < 1e-9
        assert abs(dev.V[-1, 0]) < 1e-9   # vanishes again at t = pi

    def test_operator_annihilates_solution(self):
        su = builtin_setup("sphere-cos")
        traj = integrate_newton(su.system, su.q0, su.v0, su.t_span, su.step)
        dev = integrate_deviation(su.system, traj, [0.3, -0.2], [0.1, 0.4])
        out = hessian_operator(su.system, traj, dev)
        assert np.max(np.abs(out[5:-5])) < 1e-6

    def test_harmonic_deviations_stay_bounded(self):
        # every deviation solution of the oscillator is trigonometric, so
        # close-by trajectories stay close for all later times
        traj = integrate_newton(HARMONIC.system, [1.0, 0.0], [0.0, 1.0],
                                (0.0, 8 * np.pi), 2e-3)
        rng = np.random.default_rng(17)
        v0, dv0 = rng.uniform(-1.0, 1.0, (2, 2))
        dev = integrate_deviation(HARMONIC.system, traj, v0, dv0)
        bound = np.sqrt(np.sum(v0**2) + np.sum(dv0**2))
        assert np.max(np.abs(dev.V)) <= bound + 1e-9


class TestBruteForceOracle:
    def test_free_particle_exact(self):
        dev = brute_force_deviation(FREE.system, [0.0, 0.0], [1.0, 0.0],
                                    [0.0, 0.0], [0.0, 1.0], 1e-4, (0.0, 2.0), 1e-3)
        want = np.stack([np.zeros_like(dev.trajectory.times), dev.trajectory.times], axis=1)
        assert np.max(np.abs(dev.V - want)) < 1e-9

    def test_harmonic_exact(self):
        dev = brute_force_deviation(HARMONIC.system, [1.0, 0.0], [0.0, 1.0],
                                    [1.0, 0.0], [0.0, 0.0], 1e-4, (0.0, 2 * np.pi), 1e-3)
        want = np.stack([np.cos(dev.trajectory.times),
                         np.zeros_like(dev.trajectory.times)], axis=1)
        assert np.max(np.abs(dev.V - want)) < 1e-8

    def test_matches_linearized_flow_on_sphere(self):
        su = SPHERE_FREE
        oracle = brute_force_deviation(su.system, su.q0, su.v0, [0.0, 0.0],
                                       [1.0, 0.0], 1e-4, (0.0, 2 * np.pi), 1e-3)
        v0, dv0 = linearization_initial_data(su.system, su.q0, su.v0,
                                             [0.0, 0.0], [1.0, 0.0])
        lin = integrate_deviation(su.system, oracle.trajectory, v0, dv0)
        assert np.max(np.abs(oracle.V - lin.V)) < 1e-5

    def test_dv_consistent_with_covariant_derivative(self):
        su = builtin_setup("sphere-cos")
        dev = brute_force_deviation(su.system, su.q0, su.v0, [0.1, 0.0],
                                    [0.0, 0.1], 1e-4, (0.0, 1.0), 1e-3)
        recomputed = cov_derivative_along(su.system.metric,
                                          dev.trajectory.as_curve(), dev.V, order=2)
        assert np.max(np.abs(recomputed - dev.DV)) < 1e-10
