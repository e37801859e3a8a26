"""Lagrange multipliers and residuals of the constrained (index-3) formulation.

The particle ODE eliminates the constraint forces. Given any state, the
multipliers can be recovered algebraically, and plugging them back into the
Newton equations

    m X_i'' = F1(X_i) - D_X g(X_i, y)^T lambda_i
    y''     = F0(y)   - (1/N) sum_j D_y g(X_j, y)^T lambda_j

must leave residuals at roundoff level. Particle accelerations are rebuilt as
``X'' = Phi y'' + Omega[v, v]``, never by differencing the trajectory.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import dynamics
from .constraints import phi_batch
from .errors import SingularConstraintJacobian
from .particles import SystemState, TrajectoryRecord


@dataclass(frozen=True)
class DaeResidualReport:
    t: float
    lam: np.ndarray                # (N, dim_x)
    newton_x_residual: float
    newton_y_residual: float
    constraint_residual: float
    scale: float                   # max(1, |F0|, max_i |F1_i|, |y''|) at this state


@dataclass(frozen=True)
class DaeResidualSeries:
    reports: list

    @property
    def times(self):
        return np.array([r.t for r in self.reports])

    def column(self, name):
        return np.array([getattr(r, name) for r in self.reports])

    @property
    def max_newton_x(self) -> float:
        return float(self.column("newton_x_residual").max())

    @property
    def max_newton_y(self) -> float:
        return float(self.column("newton_y_residual").max())

    @property
    def max_constraint(self) -> float:
        return float(self.column("constraint_residual").max())


def _solve_transposed(A, b):
    if A.shape[-1] == 1:
        return b / A[:, 0, :]
    return np.linalg.solve(np.swapaxes(A, 1, 2), b[..., None])[..., 0]


def _multipliers(model, field, X, y, v):
    """``(lambda, ddy, ddX, A, F1, F0)`` at one state, through the numpy route only."""
    n = X.shape[0]
    weights = np.full(n, 1.0 / n)
    mass, force, phi, om_vv = dynamics.reduced_terms(model, field, X, weights, y, v)
    ddy = dynamics.spd_solve(mass, force)
    Y = np.broadcast_to(y, (n, model.dim_y))
    A = model.d_x_g(X, Y)
    ddX = phi @ ddy + om_vv
    m = field.particle_mass
    F1 = field.f1(X)
    # D_X g^T lambda = F1 - m X''
    lam = _solve_transposed(A, F1 - m * ddX)
    return lam, ddy, ddX, A, F1, field.f0(y)


def recover_multipliers(model, field, state: SystemState) -> np.ndarray:
    """``lambda_i = D_X g^{-T} (F1(X_i) - m Phi_i y'' - m Omega_i[v, v])``, shape ``(N, dim_x)``."""
    X = state.particles
    Y = np.broadcast_to(state.y, (state.n, model.dim_y))
    phi_batch(model, X, Y)  # rank check with the offending index
    return _multipliers(model, field, X, state.y, state.v)[0]


def residual_report(model, field, state: SystemState, g_ref=None) -> DaeResidualReport:
    X, y, v = state.particles, state.y, state.v
    n = state.n
    lam, ddy, ddX, A, F1, F0 = _multipliers(model, field, X, y, v)
    m = field.particle_mass
    At_lam = (np.swapaxes(A, 1, 2) @ lam[..., None])[..., 0]
    rx = m * ddX - F1 + At_lam
    Y = np.broadcast_to(y, (n, model.dim_y))
    By = model.d_y_g(X, Y)
    ry = ddy - F0 + np.mean((np.swapaxes(By, 1, 2) @ lam[..., None])[..., 0], axis=0)
    if g_ref is None:
        cres = 0.0
    else:
        cres = float(np.max(np.linalg.norm(model.g(X, Y) - g_ref, axis=1)))
    scale = max(1.0, float(np.max(np.linalg.norm(F1, axis=1))), float(np.linalg.norm(F0)),
                float(np.linalg.norm(ddy)))
    return DaeResidualReport(
        t=state.t, lam=lam,
        newton_x_residual=float(np.max(np.linalg.norm(rx, axis=1))),
        newton_y_residual=float(np.linalg.norm(ry)),
        constraint_residual=cres, scale=scale,
    )


def dae_residuals(model, field, trajectory: TrajectoryRecord) -> DaeResidualSeries:
    """Residual report at every recorded state of a particle trajectory."""
    s0 = trajectory.state(0)
    g_ref = model.g(s0.particles, np.broadcast_to(s0.y, (s0.n, model.dim_y)))
    reports = []
    for k in range(len(trajectory)):
        try:
            reports.append(residual_report(model, field, trajectory.state(k), g_ref))
        except SingularConstraintJacobian as exc:
            raise SingularConstraintJacobian(
                f"t={trajectory.times[k]}: {exc}", index=exc.index, sigma_min=exc.sigma_min) from exc
    return DaeResidualSeries(reports)
