"""Sampled-data differentiation helpers.

Two schemes are used throughout the package:

* ``np.gradient`` (second-order central differences) where a contract
  promises exactly O(step^2) behaviour, and
* :func:`local_derivative`, a sliding polynomial stencil on arbitrarily
  spaced nodes, where operator identities need truncation errors well
  below the identity tolerances.
"""

from __future__ import annotations

import math

import numpy as np


def central_diff(fn, p, step):
    """Central-difference partials of ``fn`` at ``p``.

    Returns an array whose axis 0 is the derivative index:
    ``out[k] = d fn / d p_k``.
    """
    p = np.asarray(p, dtype=float)
    rows = []
    for k in range(p.size):
        e = np.zeros(p.size)
        e[k] = step
        rows.append((np.asarray(fn(p + e), dtype=float)
                     - np.asarray(fn(p - e), dtype=float)) / (2.0 * step))
    return np.stack(rows)


def central_diff2(fn, p, step):
    """Second central-difference partials, ``out[k, l] = d^2 fn / dp_k dp_l``."""
    p = np.asarray(p, dtype=float)
    n = p.size
    f0 = np.asarray(fn(p), dtype=float)
    out = np.empty((n, n) + f0.shape)
    for k in range(n):
        ek = np.zeros(n)
        ek[k] = step
        out[k, k] = (np.asarray(fn(p + ek), dtype=float) - 2.0 * f0
                     + np.asarray(fn(p - ek), dtype=float)) / step**2
        for l in range(k + 1, n):
            el = np.zeros(n)
            el[l] = step
            mixed = (np.asarray(fn(p + ek + el), dtype=float)
                     - np.asarray(fn(p + ek - el), dtype=float)
                     - np.asarray(fn(p - ek + el), dtype=float)
                     + np.asarray(fn(p - ek - el), dtype=float)) / (4.0 * step**2)
            out[k, l] = mixed
            out[l, k] = mixed
    return out


def local_derivative(x, y, m=1, width=7):
    """Differentiate sampled data with sliding polynomial stencils.

    Parameters
    ----------
    x : (N,) strictly increasing sample locations (may be non-uniform).
    y : (N,) or (N, ...) samples.
    m : derivative order (1 or 2 in practice).
    width : stencil width; accuracy is O(h^(width-m)) on smooth data.

    Returns an array shaped like ``y`` holding d^m y / dx^m at every node.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    n = x.size
    if n < m + 1:
        raise ValueError("insufficient samples for derivative order %d" % m)
    width = min(width, n)
    if width < m + 1:
        raise ValueError("stencil width %d too small for order %d" % (width, m))

    start = np.clip(np.arange(n) - (width - 1) // 2, 0, n - width)
    idx = start[:, None] + np.arange(width)[None, :]
    d = x[idx] - x[:, None]                      # (N, w) node offsets
    scale = np.max(np.abs(d), axis=1, keepdims=True)
    scale[scale == 0.0] = 1.0
    ds = d / scale
    # Solve the Vandermonde system sum_c w_c ds_c^r = m! delta_{r,m}.
    vand = ds[:, None, :] ** np.arange(width)[None, :, None]
    rhs = np.zeros((n, width, 1))
    rhs[:, m, 0] = math.factorial(m)
    wts = np.linalg.solve(vand, rhs)[:, :, 0] / scale**m   # (N, w)

    # differencing offsets from the evaluation node annihilates constants
    # exactly and reduces cancellation on slowly varying data
    yw = y[idx] - y[:, None]
    return np.einsum('nw,nw...->n...', wts, yw)


def cumulative_simpson(y, x):
    """Cumulative composite-Simpson antiderivative sampled at every node."""
    from scipy.integrate import cumulative_simpson as _cs

    out = _cs(np.asarray(y, dtype=float), x=np.asarray(x, dtype=float), initial=0.0)
    return out
