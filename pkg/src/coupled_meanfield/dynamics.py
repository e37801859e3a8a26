"""Shared numerical kernel for the particle ODE and the mean-field flow.

Both systems reduce to the same weighted sums over points; the particle model
uses weights ``1/N``, the flow uses the weights of its initial cloud. Routing
both through :func:`reduced_terms` makes their arithmetic identical.
"""

from __future__ import annotations

import math

import numpy as np

from .constraints import omega_vv_batch, phi_batch
from .errors import NonSPDMass, SingularConstraintJacobian, StepRejected

SCHEMES = ("rk4", "rk2")

# compiled right-hand side for built-in models; set False to force the numpy path
USE_KERNELS = True


def reduced_terms(model, field, X, weights, y, v):
    """Reduced terms ``(mass, force, phi, omega_vv)`` at the weighted points ``X``.

    mass  = I + m sum_k w_k Phi_k^T Phi_k
    force = F0(y) + sum_k w_k Phi_k^T (F1(X_k) - m Omega_k[v, v])
    """
    M, nx = X.shape
    Y = np.broadcast_to(y, (M, model.dim_y))
    phi, A = phi_batch(model, X, Y)
    om_vv = omega_vv_batch(model, X, Y, phi, A, v)
    m = field.particle_mass
    # sum over (k, i) of w_k Phi_kia Phi_kib, as one matrix product
    flat = phi.reshape(M * nx, model.dim_y)
    wflat = np.repeat(weights, nx) if nx > 1 else weights
    weighted = flat * wflat[:, None]
    mass = np.eye(model.dim_y) + m * (weighted.T @ flat)
    accel = field.f1(X) - m * om_vv
    force = field.f0(y) + weighted.T @ accel.reshape(M * nx)
    return mass, force, phi, om_vv


def spd_solve(mass, rhs):
    """Solve ``mass @ x = rhs`` by Cholesky factorization and two triangular sweeps."""
    n = mass.shape[0]
    if n == 1:
        d = mass[0, 0]
        if not d > 0.0:
            raise NonSPDMass(f"effective mass {d!r} is not positive")
        return rhs / d
    try:
        L = np.linalg.cholesky(mass)
    except np.linalg.LinAlgError as exc:
        raise NonSPDMass(str(exc)) from exc
    z = np.empty(n)
    for i in range(n):
        z[i] = (rhs[i] - L[i, :i] @ z[:i]) / L[i, i]
    x = np.empty(n)
    for i in range(n - 1, -1, -1):
        x[i] = (z[i] - L[i + 1:, i] @ x[i + 1:]) / L[i, i]
    return x


def flow_derivative(model, field, X, weights, y, v):
    """(dy, dv, dX) for the common ODE  m_eff dv = F_eff,  dX_k = Phi_k v."""
    mass, force, phi, _ = reduced_terms(model, field, X, weights, y, v)
    dv = spd_solve(mass, force)
    return v, dv, phi @ v


def energy(model, field, X, weights, y, v):
    """Kinetic + potential energy with particle velocities reconstructed as Phi v."""
    Y = np.broadcast_to(y, (X.shape[0], model.dim_y))
    phi, _ = phi_batch(model, X, Y)
    xdot = phi @ v
    m = field.particle_mass
    per_point = 0.5 * m * np.sum(xdot * xdot, axis=1) + field.w1(X)
    return float(0.5 * v @ v + field.w0(y) + weights @ per_point)


def n_steps(T, dt):
    """Number of equal steps covering [0, T] with step at most ``dt``."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    if T < 0:
        raise ValueError("T must be nonnegative")
    return int(math.ceil(T / dt - 1e-9)) if T > 0 else 0


def pack(y, v, X):
    return np.concatenate([y, v, X.ravel()])


def unpack(z, dim_y, dim_x):
    """Views ``(y, v, X)`` into a packed state vector."""
    return z[:dim_y], z[dim_y:2 * dim_y], z[2 * dim_y:].reshape(-1, dim_x)


def packed_rhs(model, field, weights):
    """Right-hand side on the packed state ``z = (y, v, X.ravel())``."""
    ny, nx = model.dim_y, model.dim_x
    if USE_KERNELS and model.kernel is not None and field.kernel is not None:
        from ._kernels import builtin_rhs

        eps, B, profile = model.kernel
        kind0, k0, kind1, k1 = field.kernel
        B = np.ascontiguousarray(B, dtype=float)
        w = np.ascontiguousarray(weights, dtype=float)
        m = field.particle_mass
        d_rel, d_abs = model.delta_rel, model.delta_abs

        def f(z):
            dz, status = builtin_rhs(z, w, nx, ny, eps, B, profile, kind0, k0, kind1, k1, m,
                                     d_rel, d_abs)
            if status == -2:
                raise NonSPDMass("Cholesky factorization of the effective mass failed")
            if status >= 0:
                raise SingularConstraintJacobian(
                    f"d_x_g is rank deficient at point {status}", index=int(status))
            return dz

        return f

    def f(z):
        y, v, X = unpack(z, ny, nx)
        _, dv, dX = flow_derivative(model, field, X, weights, y, v)
        return np.concatenate([v, dv, dX.ravel()])

    return f


def _rk_step(f, z, h, scheme):
    if scheme == "rk4":
        k1 = f(z)
        k2 = f(z + 0.5 * h * k1)
        k3 = f(z + 0.5 * h * k2)
        k4 = f(z + h * k3)
        return z + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    if scheme == "rk2":
        # explicit midpoint
        return z + h * f(z + 0.5 * h * f(z))
    raise ValueError(f"unknown scheme {scheme!r}; expected one of {SCHEMES}")


def run_fixed_step(f, z, T, dt, scheme="rk4", stride=1):
    """Integrate ``dz/dt = f(z)`` over [0, T] with equal explicit RK steps.

    Returns ``(times, states)`` recorded every ``stride`` steps; the initial and
    final states are always included.
    """
    if stride < 1:
        raise ValueError("stride must be >= 1")
    if scheme not in SCHEMES:
        raise ValueError(f"unknown scheme {scheme!r}; expected one of {SCHEMES}")
    n = n_steps(T, dt)
    h = T / n if n else 0.0
    times, states = [0.0], [z.copy()]
    for k in range(1, n + 1):
        z = _rk_step(f, z, h, scheme)
        if not np.isfinite(z).all():
            raise StepRejected(f"non-finite state after step {k}", t=k * h)
        if k % stride == 0 or k == n:
            times.append(k * h)
            states.append(z)
    return times, states
