"""Shared random-state generators and finite-difference oracles."""

import numpy as np

from gsmvisco import tensor3 as t3


def make_rng(seed=0):
    return np.random.Generator(np.random.PCG64(seed))


def rand_sym(rng, scale=1.0, shape=()):
    a = rng.normal(size=shape + (3, 3))
    return scale * 0.5 * (a + np.swapaxes(a, -2, -1))


def rand_spd(rng, scale=1.0, shape=(), shift=0.5):
    a = rng.normal(size=shape + (3, 3))
    return scale * (a @ np.swapaxes(a, -2, -1) + shift * np.eye(3))


def rand_spd_bounded_cond(rng, cond_max=1e6):
    """SPD matrix with condition number at most ``cond_max``."""
    q = rand_rot(rng)
    lo = 1.0 / np.sqrt(cond_max)
    hi = np.sqrt(cond_max)
    w = np.exp(rng.uniform(np.log(lo), np.log(hi), size=3))
    return (q * w) @ q.T


def rand_unimodular_spd(rng, scale=0.5, shape=()):
    s = rand_spd(rng, 1.0, shape) * scale + np.eye(3)
    d = t3.det_ch(s)
    return d[..., None, None] ** (-1.0 / 3.0) * s


def rand_rot(rng, shape=()):
    """Random proper rotation (det +1)."""
    a = rng.normal(size=shape + (3, 3))
    q, r = np.linalg.qr(a)
    sign = np.sign(np.einsum("...ii->...i", r))
    q = q * sign[..., None, :]
    flip = np.linalg.det(q) < 0
    q[flip, :, 2] *= -1 if q.ndim > 2 else 1
    if q.ndim == 2 and np.linalg.det(q) < 0:
        q[:, 2] *= -1
    return q


def rand_plane_F(rng, spread=0.3):
    """Random unimodular plane-stress deformation gradient."""
    f = np.zeros((3, 3))
    f[:2, :2] = np.eye(2) + spread * rng.normal(size=(2, 2))
    minor = f[0, 0] * f[1, 1] - f[0, 1] * f[1, 0]
    if minor <= 0.1:
        return rand_plane_F(rng, spread * 0.5)
    f[2, 2] = 1.0 / minor
    return f


def fd_grad_sym(f, X, h=1e-6):
    """Central FD gradient of a scalar function of a symmetric 3x3 tensor."""
    g = np.zeros((3, 3))
    for i in range(3):
        for j in range(i, 3):
            e = np.zeros((3, 3))
            e[i, j] = e[j, i] = 1.0
            d = (f(X + 0.5 * h * e) - f(X - 0.5 * h * e)) / h
            if i == j:
                g[i, i] = d
            else:
                g[i, j] = g[j, i] = 0.5 * d
    return g


def fd_grad_full(f, X, h=1e-6):
    """Central FD gradient of a scalar function of a general 3x3 tensor."""
    g = np.zeros((3, 3))
    for i in range(3):
        for j in range(3):
            e = np.zeros((3, 3))
            e[i, j] = 1.0
            g[i, j] = (f(X + 0.5 * h * e) - f(X - 0.5 * h * e)) / h
    return g


def assert_close_rel(actual, desired, rtol, floor=1.0):
    """Norm-relative comparison: ||a - b|| <= rtol * max(floor, ||b||)."""
    actual = np.asarray(actual)
    desired = np.asarray(desired)
    scale = max(floor, float(np.max(np.abs(desired))))
    err = float(np.max(np.abs(actual - desired)))
    assert err <= rtol * scale, f"error {err:.3e} > {rtol:.1e} * {scale:.3e}"
