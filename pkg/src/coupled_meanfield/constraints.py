"""Uniform full-rank constraints ``g(X, y) = const`` and the maps derived from them.

All model callables are batched: they receive particle positions ``X`` of shape
``(M, dim_x)`` and macroscopic states ``y`` of shape ``(M, dim_y)`` and return

* ``g``      -> ``(M, dim_x)``
* ``d_x_g``  -> ``(M, dim_x, dim_x)``
* ``d_y_g``  -> ``(M, dim_x, dim_y)``
* ``d2``     -> optional; ``d2(X, y, U)`` with ``U`` of shape ``(M, dim_x + dim_y)``
  returns the second derivative of ``g`` along ``U`` twice, ``D^2 g(X, y)[U, U]``,
  shape ``(M, dim_x)``. Mixed terms follow by polarization.

The public helpers (:func:`eval_phi`, :func:`eval_omega`) also accept a single
point and return unbatched arrays in that case.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from .errors import SingularConstraintJacobian

H_FD = 1e-4
DELTA_REL = 1e-8


@dataclass(frozen=True)
class ConstraintModel:
    dim_x: int
    dim_y: int
    g: Callable[[np.ndarray, np.ndarray], np.ndarray]
    d_x_g: Callable[[np.ndarray, np.ndarray], np.ndarray]
    d_y_g: Callable[[np.ndarray, np.ndarray], np.ndarray]
    d2: Optional[Callable[[np.ndarray, np.ndarray], np.ndarray]] = None
    name: str = "custom"
    # relative rank threshold: sigma_min(d_x_g) must exceed delta_rel * sigma_max
    delta_rel: float = DELTA_REL
    # absolute floor, used by check_assumptions-style guards when set
    delta_abs: float = 0.0
    h_fd: float = H_FD
    params: dict = field(default_factory=dict, compare=False)
    # (eps, B, profile code) when g = X + eps sin X + c(B y); enables the compiled kernel
    kernel: Optional[tuple] = field(default=None, compare=False, repr=False)

    def without_hessian(self) -> "ConstraintModel":
        """Same model, but Omega falls back to finite differences of Phi."""
        return replace(self, d2=None, kernel=None)

    def generic(self) -> "ConstraintModel":
        """Same model, evaluated only through the numpy callables."""
        return replace(self, kernel=None)


@dataclass(frozen=True)
class PhiOmega:
    phi: np.ndarray
    omega: np.ndarray


def _batch(model, X, y):
    X = np.asarray(X, dtype=float)
    single = X.ndim == 1
    X = np.atleast_2d(X)
    if X.shape[1] != model.dim_x:
        raise ValueError(f"expected particle dimension {model.dim_x}, got {X.shape[1]}")
    y = np.asarray(y, dtype=float)
    if y.ndim == 1:
        y = np.broadcast_to(y, (X.shape[0], model.dim_y))
    if y.shape != (X.shape[0], model.dim_y):
        raise ValueError(f"bad macroscopic state shape {y.shape}")
    return X, y, single


def _sigma_min_max(A):
    if A.shape[-1] == 1:
        s = np.abs(A[:, 0, 0])
        return s, s
    s = np.linalg.svd(A, compute_uv=False)
    return s[:, -1], s[:, 0]


def _check_rank(model, A):
    if A.shape[-1] == 1:
        # 1x1: sigma_min == sigma_max, so only the absolute floor can fail
        if np.min(np.abs(A)) > model.delta_abs:
            return
    smin, smax = _sigma_min_max(A)
    bad = ~(smin > np.maximum(model.delta_rel * smax, model.delta_abs))
    if np.any(bad):
        k = int(np.flatnonzero(bad)[0])
        raise SingularConstraintJacobian(
            f"d_x_g is rank deficient at point {k} (sigma_min={smin[k]:.3e})",
            index=k, sigma_min=float(smin[k]),
        )


def _solve(A, B):
    """Solve ``A Z = B`` batched via LU (1x1 systems divide directly)."""
    if A.shape[-1] == 1:
        return B / A
    return np.linalg.solve(A, B)


def phi_batch(model, X, y):
    """Phi for batched ``X (M, dim_x)``, ``y (M, dim_y)``; also returns d_x_g."""
    A = model.d_x_g(X, y)
    _check_rank(model, A)
    return -_solve(A, model.d_y_g(X, y)), A


def omega_vv_batch(model, X, y, phi, A, v):
    """``Omega[v, v]`` per point, shape ``(M, dim_x)``, without forming the full tensor."""
    if v.ndim == 1:
        v = np.broadcast_to(v, (X.shape[0], model.dim_y))
    if model.d2 is not None:
        # Omega[v, v] = -(d_x g)^{-1} D^2 g[(Phi v, v), (Phi v, v)]
        U = np.concatenate([(phi @ v[:, :, None])[..., 0], v], axis=1)
        return -_solve(A, model.d2(X, y, U)[..., None])[..., 0]
    # central difference of Phi along the constrained direction (Phi v, v)
    scale = np.maximum(1.0, np.sqrt(np.sum(X * X, axis=1) + np.sum(y * y, axis=1)))
    h = (model.h_fd * scale)[:, None]
    dX = (phi @ v[:, :, None])[..., 0] * h
    dy = v * h
    p_plus, _ = phi_batch(model, X + dX, y + dy)
    p_minus, _ = phi_batch(model, X - dX, y - dy)
    return ((p_plus - p_minus) @ v[:, :, None])[..., 0] / (2.0 * h)


def omega_batch(model, X, y, phi=None, A=None):
    """Omega tensor ``(M, dim_x, dim_y, dim_y)`` with ``Omega[v, w]_i = sum_ab Omega[i,a,b] v_a w_b``.

    Omega is symmetric, so each entry follows from ``Omega[v, v]`` by polarization.
    """
    if phi is None or A is None:
        phi, A = phi_batch(model, X, y)
    M, nx, ny = phi.shape
    out = np.empty((M, nx, ny, ny))
    eye = np.eye(ny)
    for a in range(ny):
        out[:, :, a, a] = omega_vv_batch(model, X, y, phi, A, eye[a])
        for b in range(a):
            plus = omega_vv_batch(model, X, y, phi, A, eye[a] + eye[b])
            minus = omega_vv_batch(model, X, y, phi, A, eye[a] - eye[b])
            out[:, :, a, b] = out[:, :, b, a] = 0.25 * (plus - minus)
    return out


def eval_phi(model: ConstraintModel, X, y) -> np.ndarray:
    """Velocity-transfer map ``Phi = -(d_x_g)^{-1} d_y_g``.

    Raises :class:`SingularConstraintJacobian` when ``d_x_g`` is rank deficient.
    """
    Xb, yb, single = _batch(model, X, y)
    phi, _ = phi_batch(model, Xb, yb)
    return phi[0] if single else phi


def eval_omega(model: ConstraintModel, X, y) -> np.ndarray:
    """Curvature tensor ``Omega[i, a, b]`` so that ``Omega[v, w]_i = sum Omega[i,a,b] v_a w_b``.

    Uses the model's Hessian when available, central differences of Phi otherwise.
    """
    Xb, yb, single = _batch(model, X, y)
    om = omega_batch(model, Xb, yb)
    return om[0] if single else om


def eval_phi_omega(model: ConstraintModel, X, y) -> PhiOmega:
    Xb, yb, single = _batch(model, X, y)
    phi, A = phi_batch(model, Xb, yb)
    om = omega_batch(model, Xb, yb, phi, A)
    if single:
        return PhiOmega(phi[0], om[0])
    return PhiOmega(phi, om)


def apply_omega(omega, v):
    """``Omega[v, v]`` for a batch of tensors ``(M, nx, ny, ny)``."""
    return np.einsum("miab,a,b->mi", omega, v, v)


# --- built-in catalogue -------------------------------------------------------

_PROFILES = {
    # name: (c, c', c'')
    "linear": (lambda s: s, np.ones_like, np.zeros_like),
    "tanh": (
        np.tanh,
        lambda s: 1.0 / np.cosh(s) ** 2,
        lambda s: -2.0 * np.tanh(s) / np.cosh(s) ** 2,
    ),
}


_PROFILE_CODES = {"linear": 0, "tanh": 1}


def _as_matrix(B, dim_x, dim_y):
    B = np.asarray(B, dtype=float)
    if B.ndim == 0:
        B = np.full((dim_x, dim_y), float(B)) if dim_x == dim_y == 1 else B * np.eye(dim_x, dim_y)
    if B.shape != (dim_x, dim_y):
        raise ValueError(f"coupling matrix must have shape {(dim_x, dim_y)}, got {B.shape}")
    return B


def linear(B, dim_x=None, dim_y=None) -> ConstraintModel:
    """``g(X, y) = X - B y`` with constant ``B``; Phi = B and Omega = 0."""
    B = np.atleast_2d(np.asarray(B, dtype=float)) if dim_x is None else _as_matrix(B, dim_x, dim_y)
    nx, ny = B.shape

    def g(X, y):
        return X - y @ B.T

    def d_x_g(X, y):
        return np.broadcast_to(np.eye(nx), (X.shape[0], nx, nx))

    def d_y_g(X, y):
        return np.broadcast_to(-B, (X.shape[0], nx, ny))

    def d2(X, y, U):
        return np.zeros((X.shape[0], nx))

    return ConstraintModel(nx, ny, g, d_x_g, d_y_g, d2, name="linear",
                           params={"B": B.tolist()}, kernel=(0.0, -B, _PROFILE_CODES["linear"]))


def _offset(B, profile):
    if profile not in _PROFILES:
        raise ValueError(f"unknown profile {profile!r}; expected one of {sorted(_PROFILES)}")
    c, dc, ddc = _PROFILES[profile]
    nx, ny = B.shape

    def value(y):
        return c(y @ B.T)

    def jac(y):
        s = y @ B.T
        return dc(s)[:, :, None] * B[None, :, :]

    def quad(y, Uy):
        # D^2 c[u, u]_i = c''((B y)_i) (B u)_i^2
        Bu = Uy @ B.T
        return ddc(y @ B.T) * Bu * Bu

    return value, jac, quad


def shift(B=1.0, profile="tanh", dim_x=1, dim_y=1) -> ConstraintModel:
    """``g(X, y) = X + c(B y)`` applied componentwise; Phi does not depend on X."""
    B = _as_matrix(B, dim_x, dim_y)
    nx, ny = B.shape
    value, jac, quad = _offset(B, profile)

    def g(X, y):
        return X + value(y)

    def d_x_g(X, y):
        return np.broadcast_to(np.eye(nx), (X.shape[0], nx, nx))

    def d_y_g(X, y):
        return jac(y)

    def d2(X, y, U):
        return quad(y, U[:, nx:])

    return ConstraintModel(nx, ny, g, d_x_g, d_y_g, d2, name="shift",
                           params={"B": B.tolist(), "profile": profile},
                           kernel=(0.0, B, _PROFILE_CODES[profile]))


def warped(eps=0.5, B=1.0, profile="linear", dim_x=1, dim_y=1) -> ConstraintModel:
    """``g(X, y) = X + eps sin(X) + c(B y)``, componentwise; uniformly elliptic for |eps| < 1."""
    if not abs(eps) < 1:
        raise ValueError("warped constraint needs |eps| < 1 for d_x_g to stay invertible")
    B = _as_matrix(B, dim_x, dim_y)
    nx, ny = B.shape
    value, jac, quad = _offset(B, profile)
    idx = np.arange(nx)

    def g(X, y):
        return X + eps * np.sin(X) + value(y)

    def d_x_g(X, y):
        A = np.zeros((X.shape[0], nx, nx))
        A[:, idx, idx] = 1.0 + eps * np.cos(X)
        return A

    def d_y_g(X, y):
        return jac(y)

    def d2(X, y, U):
        Ux = U[:, :nx]
        return -eps * np.sin(X) * Ux * Ux + quad(y, U[:, nx:])

    return ConstraintModel(nx, ny, g, d_x_g, d_y_g, d2, name="warped",
                           params={"eps": eps, "B": B.tolist(), "profile": profile},
                           kernel=(float(eps), B, _PROFILE_CODES[profile]))


CATALOGUE = {"linear": linear, "shift": shift, "warped": warped}


# --- assumption checks --------------------------------------------------------

@dataclass
class AssumptionReport:
    n_samples: int
    max_phi_norm: float
    max_omega_norm: float
    lip_phi: float
    lip_omega: float
    min_sigma_dxg: float
    bounds: dict
    violations: list

    @property
    def ok(self) -> bool:
        return not self.violations


def _max_pair_ratio(values, dist, chunk=256):
    """max over i<j of ||values_i - values_j|| / dist_ij (dist given as a callable)."""
    M = values.shape[0]
    flat = values.reshape(M, -1)
    best = 0.0
    for start in range(0, M, chunk):
        stop = min(start + chunk, M)
        diff = np.linalg.norm(flat[start:stop, None, :] - flat[None, :, :], axis=-1)
        d = dist(start, stop)
        mask = d > 0
        if np.any(mask):
            best = max(best, float(np.max(diff[mask] / d[mask])))
    return best


def check_assumptions(model: ConstraintModel, low, high, n_samples: int, seed: int = 0,
                      bounds: Optional[dict] = None) -> AssumptionReport:
    """Sampled estimates of the constraint bounds on the box ``[low, high]`` in (X, y).

    ``low``/``high`` have length ``dim_x + dim_y``. Lipschitz constants are the
    largest pairwise ratio over the sample, so they are lower bounds on the true
    constants. ``bounds`` may hold any of M_phi, M_omega, L_phi, L_omega, delta.
    """
    if n_samples < 2:
        raise ValueError("n_samples must be >= 2")
    low = np.asarray(low, dtype=float)
    high = np.asarray(high, dtype=float)
    nx, ny = model.dim_x, model.dim_y
    if low.shape != (nx + ny,) or high.shape != (nx + ny,):
        raise ValueError("box bounds must have length dim_x + dim_y")
    rng = np.random.default_rng(seed)
    Z = low + (high - low) * rng.random((n_samples, nx + ny))
    X, y = Z[:, :nx], Z[:, nx:]

    A = model.d_x_g(X, y)
    smin, _ = _sigma_min_max(A)
    phi = -_solve(A, model.d_y_g(X, y))
    omega = omega_batch(model, X, y, phi, A)

    def dist(start, stop):
        dX = np.linalg.norm(X[start:stop, None, :] - X[None, :, :], axis=-1)
        dY = np.linalg.norm(y[start:stop, None, :] - y[None, :, :], axis=-1)
        return dX + dY

    phi_norm = np.linalg.norm(phi, ord=2, axis=(1, 2))
    omega_norm = np.linalg.norm(omega.reshape(n_samples, -1), axis=1)
    report = AssumptionReport(
        n_samples=n_samples,
        max_phi_norm=float(phi_norm.max()),
        max_omega_norm=float(omega_norm.max()),
        lip_phi=_max_pair_ratio(phi, dist),
        lip_omega=_max_pair_ratio(omega, dist),
        min_sigma_dxg=float(smin.min()),
        bounds=dict(bounds or {}),
        violations=[],
    )
    checks = {
        "M_phi": report.max_phi_norm,
        "M_omega": report.max_omega_norm,
        "L_phi": report.lip_phi,
        "L_omega": report.lip_omega,
    }
    for key, value in checks.items():
        if key in report.bounds and value > report.bounds[key]:
            report.violations.append(f"{key}: estimate {value:.6g} exceeds bound {report.bounds[key]:.6g}")
    if "delta" in report.bounds and report.min_sigma_dxg <= report.bounds["delta"]:
        report.violations.append(
            f"delta: min singular value {report.min_sigma_dxg:.6g} not above {report.bounds['delta']:.6g}")
    return report
