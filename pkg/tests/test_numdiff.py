import numpy as np
import pytest

from jacobistab.numdiff import (central_diff, central_diff2, cumulative_simpson,
                                local_derivative)


def test_local_derivative_exact_on_polynomials():
    x = np.linspace(0.0, 1.0, 25)
    y = 3.0 * x**4 - 2.0 * x**2 + x - 5.0
    dy = local_derivative(x, y, m=1, width=7)
    d2y = local_derivative(x, y, m=2, width=7)
    assert np.max(np.abs(dy - (12 * x**3 - 4 * x + 1))) < 1e-10
    assert np.max(np.abs(d2y - (36 * x**2 - 4))) < 1e-8


def test_local_derivative_nonuniform_grid():
    rng = np.random.default_rng(0)
    x = np.sort(rng.uniform(0.0, 2.0, 60))
    y = np.sin(x)
    dy = local_derivative(x, y, m=1, width=7)
    assert np.max(np.abs(dy - np.cos(x))) < 1e-6


def test_local_derivative_vector_samples():
    x = np.linspace(0.0, np.pi, 200)
    y = np.stack([np.sin(x), np.cos(2 * x)], axis=1)
    dy = local_derivative(x, y, m=1, width=7)
    want = np.stack([np.cos(x), -2 * np.sin(2 * x)], axis=1)
    assert np.max(np.abs(dy - want)) < 1e-9


def test_local_derivative_rejects_short_input():
    with pytest.raises(ValueError):
        local_derivative(np.array([0.0, 1.0]), np.array([1.0, 2.0]), m=2)


def test_central_diff_matches_gradient():
    def f(p):
        return p[0] ** 2 * p[1] + np.exp(p[1])

    p = np.array([1.2, -0.3])
    d = central_diff(f, p, 1e-5)
    assert abs(d[0] - 2 * p[0] * p[1]) < 1e-9
    assert abs(d[1] - (p[0] ** 2 + np.exp(p[1]))) < 1e-9


def test_central_diff2_symmetric():
    def f(p):
        return np.sin(p[0]) * p[1] ** 3

    p = np.array([0.7, 1.1])
    h = central_diff2(f, p, 1e-4)
    assert h.shape == (2, 2)
    assert abs(h[0, 1] - h[1, 0]) < 1e-12
    assert abs(h[0, 1] - 3 * np.cos(p[0]) * p[1] ** 2) < 1e-6


def test_cumulative_simpson_quartic():
    x = np.linspace(0.0, 1.0, 101)
    s = cumulative_simpson(x**2, x)
    assert abs(s[0]) == 0.0
    assert np.max(np.abs(s - x**3 / 3.0)) < 1e-10
