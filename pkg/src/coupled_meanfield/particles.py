"""N-particle ODE model: assembly of the effective system plus time integration."""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field

import numpy as np

from . import dynamics
from .constraints import phi_batch
from .errors import SingularConstraintJacobian


@dataclass
class SystemState:
    t: float
    y: np.ndarray
    v: np.ndarray
    particles: np.ndarray  # (N, dim_x)

    def __post_init__(self):
        self.y = np.atleast_1d(np.asarray(self.y, dtype=float))
        self.v = np.atleast_1d(np.asarray(self.v, dtype=float))
        P = np.asarray(self.particles, dtype=float)
        self.particles = P.reshape(-1, 1) if P.ndim == 1 else P
        if self.particles.shape[0] < 1:
            raise ValueError("need at least one particle")
        if self.y.shape != self.v.shape:
            raise ValueError("y and v must have the same shape")
        for arr in (self.y, self.v, self.particles):
            if not np.all(np.isfinite(arr)):
                raise ValueError("state contains non-finite values")

    @property
    def n(self) -> int:
        return self.particles.shape[0]


@dataclass(frozen=True)
class EffectiveSystem:
    m_eff: np.ndarray
    f_eff: np.ndarray


def _uniform(n):
    return np.full(n, 1.0 / n)


def _check_dims(model, state):
    if state.particles.shape[1] != model.dim_x or state.y.shape != (model.dim_y,):
        raise ValueError(
            f"state dimensions ({state.particles.shape[1]}, {state.y.shape[0]}) do not match "
            f"model ({model.dim_x}, {model.dim_y})")


def assemble_effective(model, field, state: SystemState) -> EffectiveSystem:
    _check_dims(model, state)
    mass, force, _, _ = dynamics.reduced_terms(
        model, field, state.particles, _uniform(state.n), state.y, state.v)
    return EffectiveSystem(mass, force)


def rhs(model, field, state: SystemState):
    """``(dy, dv, dX)`` of the ODE model at ``state``."""
    _check_dims(model, state)
    return dynamics.flow_derivative(
        model, field, state.particles, _uniform(state.n), state.y, state.v)


def acceleration(model, field, state: SystemState) -> np.ndarray:
    return rhs(model, field, state)[1]


def total_energy(model, field, state: SystemState) -> float:
    _check_dims(model, state)
    return dynamics.energy(model, field, state.particles, _uniform(state.n), state.y, state.v)


def constraint_values(model, particles, y):
    return model.g(particles, np.broadcast_to(y, (particles.shape[0], model.dim_y)))


@dataclass
class TrajectoryRecord:
    times: np.ndarray          # (K,)
    y: np.ndarray              # (K, dim_y)
    v: np.ndarray              # (K, dim_y)
    particles: np.ndarray      # (K, N, dim_x)
    energy: np.ndarray         # (K,)
    constraint_drift: np.ndarray  # (K,)
    weights: np.ndarray = dc_field(default=None)  # (N,), uniform for particle runs

    def __len__(self):
        return len(self.times)

    def state(self, k) -> SystemState:
        return SystemState(float(self.times[k]), self.y[k], self.v[k], self.particles[k])

    @property
    def energy_drift(self) -> float:
        """max_t |E(t) - E(0)| / max(|E(0)|, 1)."""
        e0 = self.energy[0]
        return float(np.max(np.abs(self.energy - e0)) / max(abs(e0), 1.0))

    @property
    def max_constraint_drift(self) -> float:
        return float(np.max(self.constraint_drift))


def record_trajectory(model, field, times, ys, vs, Xs, weights):
    """Energies and constraint drift for a list of recorded states."""
    g0 = constraint_values(model, Xs[0], ys[0])
    energies = np.array([dynamics.energy(model, field, X, weights, y, v)
                         for y, v, X in zip(ys, vs, Xs)])
    drift = np.array([
        float(np.max(np.linalg.norm(constraint_values(model, X, y) - g0, axis=1)))
        for y, X in zip(ys, Xs)
    ])
    return TrajectoryRecord(
        times=np.asarray(times), y=np.array(ys), v=np.array(vs), particles=np.array(Xs),
        energy=energies, constraint_drift=drift, weights=weights,
    )


def integrate(model, field, init: SystemState, T: float, dt: float, scheme: str = "rk4",
              stride: int = 1) -> TrajectoryRecord:
    """Fixed-step explicit Runge-Kutta integration of the ODE model over [0, T].

    Particle velocities are slaved to the macroscopic velocity, so the initial
    data is just ``(X_i(0), y(0), v(0))``.
    """
    _check_dims(model, init)
    w = _uniform(init.n)
    f = dynamics.packed_rhs(model, field, w)
    try:
        times, states = dynamics.run_fixed_step(
            f, dynamics.pack(init.y, init.v, init.particles), T, dt, scheme, stride)
    except SingularConstraintJacobian as exc:
        raise SingularConstraintJacobian(
            f"particle {exc.index}: {exc}", index=exc.index, sigma_min=exc.sigma_min) from exc
    ys, vs, Xs = zip(*(dynamics.unpack(z, model.dim_y, model.dim_x) for z in states))
    times = [init.t + t for t in times]
    return record_trajectory(model, field, times, ys, vs, Xs, w)


def particle_velocities(model, state: SystemState) -> np.ndarray:
    Y = np.broadcast_to(state.y, (state.n, model.dim_y))
    phi, _ = phi_batch(model, state.particles, Y)
    return np.einsum("kia,a->ki", phi, state.v)
