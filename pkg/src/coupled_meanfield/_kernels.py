"""Compiled right-hand side for the built-in model/field catalogue.

Every built-in constraint has the form ``g(X, y) = X + eps sin(X) + c(B y)``
(componentwise, ``c`` in {identity, tanh}); LINEAR is ``eps = 0``, identity
profile and coupling ``-B``. Built-in potentials are harmonic or soft on each
component. The numpy path in :mod:`dynamics` is the reference; tests pin this
kernel to it.
"""

import numpy as np
from numba import njit

PROFILE_LINEAR = 0
PROFILE_TANH = 1
POT_HARMONIC = 0
POT_SOFT = 1


@njit(cache=True)
def _profile(profile, s):
    """c(s), c'(s), c''(s)."""
    if profile == PROFILE_TANH:
        t = np.tanh(s)
        d = 1.0 - t * t
        return t, d, -2.0 * t * d
    return s, 1.0, 0.0


@njit(cache=True)
def _force(kind, k, x, out):
    """Write -grad W(x) into ``out``."""
    if kind == POT_SOFT:
        r2 = 0.0
        for i in range(x.shape[0]):
            r2 += x[i] * x[i]
        scale = -k / np.sqrt(1.0 + r2)
    else:
        scale = -k
    for i in range(x.shape[0]):
        out[i] = scale * x[i]


@njit(cache=True)
def _cholesky_solve(M, b):
    n = M.shape[0]
    L = np.zeros((n, n))
    for j in range(n):
        s = M[j, j]
        for p in range(j):
            s -= L[j, p] * L[j, p]
        if not s > 0.0:
            return b * np.nan, False
        L[j, j] = np.sqrt(s)
        for i in range(j + 1, n):
            s = M[i, j]
            for p in range(j):
                s -= L[i, p] * L[j, p]
            L[i, j] = s / L[j, j]
    x = np.empty(n)
    for i in range(n):
        s = b[i]
        for p in range(i):
            s -= L[i, p] * x[p]
        x[i] = s / L[i, i]
    for i in range(n - 1, -1, -1):
        s = x[i]
        for p in range(i + 1, n):
            s -= L[p, i] * x[p]
        x[i] = s / L[i, i]
    return x, True


@njit(cache=True)
def builtin_rhs(z, weights, nx, ny, eps, B, profile, kind0, k0, kind1, k1, m, delta_rel, delta_abs):
    """Packed derivative ``(v, dv, dX)``; returns ``(dz, status)``.

    status: -1 ok, -2 non-SPD mass, k >= 0 index of a singular particle Jacobian.
    """
    M = weights.shape[0]
    y = z[:ny]
    v = z[ny:2 * ny]
    dz = np.empty_like(z)
    dz[:ny] = v

    # c(B y) and its derivatives depend on y only, shared by all particles
    s = B @ y
    Bv = B @ v
    dc = np.empty(nx)
    curv_y = np.empty(nx)  # c''(s_i) (B v)_i^2
    for i in range(nx):
        _, d1, d2 = _profile(profile, s[i])
        dc[i] = d1
        curv_y[i] = d2 * Bv[i] * Bv[i]

    mass = np.zeros((ny, ny))
    force = np.zeros(ny)
    phi = np.empty((nx, ny))
    f1 = np.empty(nx)
    acc = np.empty(nx)
    diag = np.empty(nx)
    for k in range(M):
        x = z[2 * ny + k * nx:2 * ny + (k + 1) * nx]
        w = weights[k]
        # d_x_g is diagonal, so its singular values are |diag|
        smin = np.inf
        smax = 0.0
        for i in range(nx):
            diag[i] = 1.0 + eps * np.cos(x[i])
            smin = min(smin, abs(diag[i]))
            smax = max(smax, abs(diag[i]))
        floor = delta_abs if nx == 1 else max(delta_rel * smax, delta_abs)
        if not smin > floor:
            return dz, k
        _force(kind1, k1, x, f1)
        for i in range(nx):
            a = diag[i]
            ux = 0.0
            for b in range(ny):
                phi[i, b] = -dc[i] * B[i, b] / a
                ux += phi[i, b] * v[b]
            dz[2 * ny + k * nx + i] = ux
            second = -eps * np.sin(x[i]) * ux * ux + curv_y[i]
            acc[i] = f1[i] + m * second / a  # F1 - m Omega[v, v]
        for a_ in range(ny):
            t = 0.0
            for i in range(nx):
                t += phi[i, a_] * acc[i]
            force[a_] += w * t
            for b in range(a_, ny):
                t = 0.0
                for i in range(nx):
                    t += phi[i, a_] * phi[i, b]
                mass[a_, b] += w * t
    f0 = np.empty(ny)
    _force(kind0, k0, y, f0)
    for a_ in range(ny):
        force[a_] += f0[a_]
        for b in range(a_, ny):
            mass[a_, b] *= m
            mass[b, a_] = mass[a_, b]
        mass[a_, a_] += 1.0
    dv, ok = _cholesky_solve(mass, force)
    dz[ny:2 * ny] = dv
    if not ok:
        return dz, -2
    return dz, -1
