"""Mean-field characteristic flow on weighted point clouds.

A probability measure is discretized as a :class:`WeightedPointCloud`. The flow
transports the nodes and leaves the weights untouched, so the pushed-forward
measure at time ``t`` is just the cloud of transported nodes. All sums go
through :mod:`dynamics`, the same code the particle model uses; an equal-weight
cloud therefore reproduces the particle system bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field
from typing import Callable, Optional

import numpy as np
from scipy import special, stats

from . import dynamics
from .constraints import phi_batch
from .errors import SingularConstraintJacobian

WEIGHT_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class WeightedPointCloud:
    points: np.ndarray   # (M, dim)
    weights: np.ndarray  # (M,)

    def __post_init__(self):
        P = np.asarray(self.points, dtype=float)
        if P.ndim == 1:
            P = P.reshape(-1, 1)
        w = np.asarray(self.weights, dtype=float).reshape(-1)
        if P.ndim != 2 or P.shape[0] < 1:
            raise ValueError("points must be a non-empty (M, dim) array")
        if w.shape[0] != P.shape[0]:
            raise ValueError(f"{P.shape[0]} points but {w.shape[0]} weights")
        if not (np.all(np.isfinite(P)) and np.all(np.isfinite(w))):
            raise ValueError("cloud contains non-finite values")
        if np.any(w < 0):
            raise ValueError("weights must be nonnegative")
        if abs(w.sum() - 1.0) > WEIGHT_TOL:
            raise ValueError(f"weights sum to {w.sum()!r}, not 1")
        P.setflags(write=False)
        w.setflags(write=False)
        object.__setattr__(self, "points", P)
        object.__setattr__(self, "weights", w)

    @classmethod
    def empirical(cls, points) -> "WeightedPointCloud":
        P = np.asarray(points, dtype=float)
        n = P.shape[0]
        return cls(P, np.full(n, 1.0 / n))

    @property
    def size(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    @property
    def first_moment(self) -> float:
        """``sum_k w_k (1 + |x_k|)``."""
        return float(self.weights @ (1.0 + np.linalg.norm(self.points, axis=1)))

    @property
    def is_uniform(self) -> bool:
        return bool(np.all(self.weights == self.weights[0]))

    def moved(self, points) -> "WeightedPointCloud":
        return WeightedPointCloud(points, self.weights)

    def integrate(self, fn) -> float:
        return float(self.weights @ fn(self.points))


@dataclass
class FlowState:
    t: float
    y: np.ndarray
    v: np.ndarray
    nodes: np.ndarray
    init_cloud: WeightedPointCloud

    def __post_init__(self):
        self.y = np.atleast_1d(np.asarray(self.y, dtype=float))
        self.v = np.atleast_1d(np.asarray(self.v, dtype=float))
        self.nodes = np.asarray(self.nodes, dtype=float).reshape(self.init_cloud.points.shape)

    @classmethod
    def start(cls, cloud: WeightedPointCloud, y, v, t=0.0) -> "FlowState":
        return cls(t, y, v, cloud.points.copy(), cloud)

    @property
    def cloud(self) -> WeightedPointCloud:
        return self.init_cloud.moved(self.nodes)


@dataclass
class FlowTrajectory:
    times: np.ndarray
    y: np.ndarray        # (K, dim_y)
    v: np.ndarray        # (K, dim_y)
    nodes: np.ndarray    # (K, M, dim_x)
    energy: np.ndarray   # (K,)
    init_cloud: WeightedPointCloud = dc_field(repr=False)

    def __len__(self):
        return len(self.times)

    @property
    def weights(self):
        return self.init_cloud.weights

    def state(self, k) -> FlowState:
        return FlowState(float(self.times[k]), self.y[k], self.v[k], self.nodes[k], self.init_cloud)

    def cloud(self, k) -> WeightedPointCloud:
        return self.init_cloud.moved(self.nodes[k])

    @property
    def energy_drift(self) -> float:
        e0 = self.energy[0]
        return float(np.max(np.abs(self.energy - e0)) / max(abs(e0), 1.0))

    def index_of(self, t, tol=1e-9) -> int:
        """Index of the recorded time equal to ``t`` (within ``tol`` of the spacing)."""
        k = int(np.argmin(np.abs(self.times - t)))
        spacing = np.min(np.diff(self.times)) if len(self.times) > 1 else 1.0
        if abs(self.times[k] - t) > tol * max(spacing, 1e-300) + 1e-14:
            raise ValueError(f"time {t!r} is not on the recorded grid")
        return k


def _check_cloud(model, cloud):
    if cloud.dim != model.dim_x:
        raise ValueError(f"cloud dimension {cloud.dim} does not match dim_x={model.dim_x}")


def mean_field_mass(model, field, cloud: WeightedPointCloud, y) -> np.ndarray:
    """``sum_k w_k (I + m Phi_k^T Phi_k)`` (equal to ``I + m sum_k w_k Phi_k^T Phi_k``)."""
    _check_cloud(model, cloud)
    y = np.atleast_1d(np.asarray(y, dtype=float))
    mass, _, _, _ = dynamics.reduced_terms(model, field, cloud.points, cloud.weights, y,
                                           np.zeros_like(y))
    return mass


def mean_field_force(model, field, cloud: WeightedPointCloud, y, v) -> np.ndarray:
    _check_cloud(model, cloud)
    y = np.atleast_1d(np.asarray(y, dtype=float))
    v = np.atleast_1d(np.asarray(v, dtype=float))
    _, force, _, _ = dynamics.reduced_terms(model, field, cloud.points, cloud.weights, y, v)
    return force


def flow_rhs(model, field, fs: FlowState):
    """``(dy, dv, dnodes)`` of the characteristic flow."""
    _check_cloud(model, fs.init_cloud)
    return dynamics.flow_derivative(model, field, fs.nodes, fs.init_cloud.weights, fs.y, fs.v)


def mean_field_energy(model, field, fs: FlowState) -> float:
    return dynamics.energy(model, field, fs.nodes, fs.init_cloud.weights, fs.y, fs.v)


def integrate_flow(model, field, init: FlowState, T: float, dt: float, scheme: str = "rk4",
                   stride: int = 1) -> FlowTrajectory:
    _check_cloud(model, init.init_cloud)
    if init.y.shape != (model.dim_y,) or init.v.shape != (model.dim_y,):
        raise ValueError(f"macroscopic state must have dimension {model.dim_y}")
    w = init.init_cloud.weights
    f = dynamics.packed_rhs(model, field, w)
    try:
        times, states = dynamics.run_fixed_step(
            f, dynamics.pack(init.y, init.v, init.nodes), T, dt, scheme, stride)
    except SingularConstraintJacobian as exc:
        raise SingularConstraintJacobian(
            f"node {exc.index}: {exc}", index=exc.index, sigma_min=exc.sigma_min) from exc
    ys, vs, Xs = zip(*(dynamics.unpack(z, model.dim_y, model.dim_x) for z in states))
    energy = np.array([dynamics.energy(model, field, X, w, y, v) for y, v, X in zip(ys, vs, Xs)])
    return FlowTrajectory(
        times=np.array([init.t + t for t in times]), y=np.array(ys), v=np.array(vs),
        nodes=np.array(Xs), energy=energy, init_cloud=init.init_cloud,
    )


# --- weak form ----------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Bump:
    """``exp(1 - 1/(1 - |(x - c)/r|^2))`` inside the ball, zero outside; peak value 1."""

    center: np.ndarray
    radius: float

    def _s(self, X):
        d = np.atleast_2d(X) - self.center
        return d, np.sum(d * d, axis=1) / self.radius ** 2

    def __call__(self, X):
        _, s = self._s(X)
        out = np.zeros_like(s)
        inside = s < 1.0
        out[inside] = np.exp(1.0 - 1.0 / (1.0 - s[inside]))
        return out

    def grad(self, X):
        d, s = self._s(X)
        out = np.zeros_like(d)
        inside = s < 1.0
        si = s[inside]
        val = np.exp(1.0 - 1.0 / (1.0 - si))
        out[inside] = (-2.0 * val / (self.radius ** 2 * (1.0 - si) ** 2))[:, None] * d[inside]
        return out


def weak_form_residual(model, trajectory: FlowTrajectory, test_fn, t: float, dt_fd: float,
                       grad: Optional[Callable] = None) -> float:
    """``|d/dt <xi, mu^t> - <grad xi . Phi(., y) v, mu^t>|`` with a central difference in time.

    ``t`` and ``t +- dt_fd`` must lie on the recorded time grid.
    """
    grad = grad if grad is not None else test_fn.grad
    k = trajectory.index_of(t)
    kp = trajectory.index_of(t + dt_fd)
    km = trajectory.index_of(t - dt_fd)
    w = trajectory.weights
    h = trajectory.times[kp] - trajectory.times[km]
    ddt = (w @ test_fn(trajectory.nodes[kp]) - w @ test_fn(trajectory.nodes[km])) / h
    X = trajectory.nodes[k]
    Y = np.broadcast_to(trajectory.y[k], (X.shape[0], model.dim_y))
    phi, _ = phi_batch(model, X, Y)
    vel = phi @ trajectory.v[k]
    flux = w @ np.sum(grad(X) * vel, axis=1)
    return float(abs(ddt - flux))


# --- initial measures -----------------------------------------------------------

DISTRIBUTIONS = ("uniform", "truncnormal", "delta")


@dataclass(frozen=True)
class Distribution:
    """Product measure on a box, named by one of ``DISTRIBUTIONS`` (truncnormal is cut to the box)."""

    name: str
    low: tuple = (-1.0,)
    high: tuple = (1.0,)
    mean: tuple = (0.0,)
    std: tuple = (1.0,)
    point: tuple = (0.0,)
    dim: int = 1

    def __post_init__(self):
        if self.name not in DISTRIBUTIONS:
            raise ValueError(f"unknown distribution {self.name!r}; expected one of {DISTRIBUTIONS}")
        for key in ("low", "high", "mean", "std", "point"):
            vals = tuple(float(x) for x in np.atleast_1d(getattr(self, key)))
            if len(vals) == 1 and self.dim > 1:
                vals = vals * self.dim
            if len(vals) != self.dim:
                raise ValueError(f"{key} has {len(vals)} entries, expected {self.dim}")
            object.__setattr__(self, key, vals)
        if self.name != "delta" and not all(l < h for l, h in zip(self.low, self.high)):
            raise ValueError("need low < high in every coordinate")
        if self.name == "truncnormal" and not all(s > 0 for s in self.std):
            raise ValueError("std must be positive")

    def ppf(self, u):
        """Coordinatewise inverse CDF, ``u`` of shape ``(..., dim)`` in (0, 1)."""
        u = np.asarray(u, dtype=float)
        lo, hi = np.array(self.low), np.array(self.high)
        if self.name == "uniform":
            return lo + u * (hi - lo)
        if self.name == "delta":
            return np.broadcast_to(np.array(self.point), u.shape).copy()
        mu, sd = np.array(self.mean), np.array(self.std)
        a, b = (lo - mu) / sd, (hi - mu) / sd
        return stats.truncnorm.ppf(u, a, b, loc=mu, scale=sd)

    def cdf(self, x):
        x = np.asarray(x, dtype=float)
        lo, hi = np.array(self.low), np.array(self.high)
        if self.name == "uniform":
            return np.clip((x - lo) / (hi - lo), 0.0, 1.0)
        if self.name == "delta":
            return (x >= np.array(self.point)).astype(float)
        mu, sd = np.array(self.mean), np.array(self.std)
        za, zb = special.ndtr((lo - mu) / sd), special.ndtr((hi - mu) / sd)
        return np.clip((special.ndtr((x - mu) / sd) - za) / (zb - za), 0.0, 1.0)


def iid_cloud(dist: Distribution, n: int, rng: np.random.Generator) -> WeightedPointCloud:
    """``n`` independent samples with equal weights (inverse-CDF sampling)."""
    if n < 1:
        raise ValueError("need at least one sample")
    return WeightedPointCloud.empirical(dist.ppf(rng.random((n, dist.dim))))


def quantile_cloud(dist: Distribution, m: int) -> WeightedPointCloud:
    """Deterministic equal-weight nodes at the midpoint quantiles ``(k + 1/2)/m``.

    In 2D the nodes form the tensor grid of the coordinate quantiles (``m**2`` nodes).
    """
    if m < 1:
        raise ValueError("need at least one node")
    if dist.dim > 2:
        raise ValueError("quantile clouds are implemented for dimension 1 and 2")
    u = (np.arange(m) + 0.5) / m
    per_axis = [dist.ppf(np.repeat(u[:, None], dist.dim, axis=1))[:, j] for j in range(dist.dim)]
    grids = np.meshgrid(*per_axis, indexing="ij")
    pts = np.stack([g.ravel() for g in grids], axis=1)
    return WeightedPointCloud.empirical(pts)
