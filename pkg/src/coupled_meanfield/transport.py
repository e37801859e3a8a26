"""Monge-Kantorovich distance W1 between weighted point clouds.

Three routes:

* ``w1_sorted_1d``: exact on the line, ``int |F_a - F_b| dx`` from the merged supports.
* ``w1_assignment``: exact for two equal-size, equal-weight clouds in any dimension,
  via a shortest-augmenting-path Hungarian method (O(M^3)).
* ``w1_dual_lower_bound``: ``max |int phi d(a - b)|`` over a finite family of
  1-Lipschitz probes; never exceeds the exact value.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Any, Callable, Optional, Sequence

import numpy as np
from numba import njit

from .errors import DimensionMismatch, ProbeNotLipschitz, SizeCapExceeded, UnsupportedWeights
from .meanfield import WeightedPointCloud

ASSIGNMENT_CAP = 1024
LIP_TOL = 1e-9
ROUNDING_ULPS = 8


class W1Method(str, Enum):
    SORT_1D = "SORT_1D"
    ASSIGNMENT = "ASSIGNMENT"
    DUAL_LOWER_BOUND = "DUAL_LOWER_BOUND"


@dataclass(frozen=True)
class W1Result:
    value: float
    method: W1Method
    certificate: Optional[Any] = None


def _as_cloud(c) -> WeightedPointCloud:
    if isinstance(c, WeightedPointCloud):
        return c
    return WeightedPointCloud.empirical(np.asarray(c, dtype=float))


def w1_sorted_1d(a, b) -> W1Result:
    """Exact W1 on the real line for arbitrary weights and sizes."""
    a, b = _as_cloud(a), _as_cloud(b)
    if a.dim != 1 or b.dim != 1:
        raise DimensionMismatch(f"SORT_1D needs 1D clouds, got dimensions {a.dim} and {b.dim}")
    x = np.concatenate([a.points[:, 0], b.points[:, 0]])
    w = np.concatenate([a.weights, -b.weights])
    # stable sort: ties keep input order (a before b, then by index)
    order = np.argsort(x, kind="stable")
    x, w = x[order], w[order]
    cdf_gap = np.cumsum(w)[:-1]
    value = float(np.abs(cdf_gap) @ np.diff(x))
    return W1Result(value, W1Method.SORT_1D)


@njit(cache=True)
def _hungarian(cost):
    """Minimum-cost perfect matching of a square cost matrix.

    Shortest augmenting paths with row/column potentials. Ties in the reduced
    cost pick the lowest column index, so the result is deterministic.
    Returns ``assign`` with row ``i`` matched to column ``assign[i]``.
    """
    n = cost.shape[0]
    INF = np.inf
    u = np.zeros(n + 1)
    v = np.zeros(n + 1)
    p = np.zeros(n + 1, dtype=np.int64)    # p[j]: row matched to column j (1-based, 0 = free)
    way = np.zeros(n + 1, dtype=np.int64)
    minv = np.empty(n + 1)
    used = np.empty(n + 1, dtype=np.bool_)
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        minv[:] = INF
        used[:] = False
        while True:
            used[j0] = True
            i0 = p[j0]
            delta = INF
            j1 = -1
            for j in range(1, n + 1):
                if not used[j]:
                    cur = cost[i0 - 1, j - 1] - u[i0] - v[j]
                    if cur < minv[j]:
                        minv[j] = cur
                        way[j] = j0
                    if minv[j] < delta:
                        delta = minv[j]
                        j1 = j
            for j in range(n + 1):
                if used[j]:
                    u[p[j]] += delta
                    v[j] -= delta
                else:
                    minv[j] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while True:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1
            if j0 == 0:
                break
    assign = np.empty(n, dtype=np.int64)
    for j in range(1, n + 1):
        assign[p[j] - 1] = j - 1
    return assign


def assignment(cost) -> np.ndarray:
    """Optimal permutation ``sigma`` minimizing ``sum_i cost[i, sigma[i]]``."""
    cost = np.ascontiguousarray(cost, dtype=float)
    if cost.ndim != 2 or cost.shape[0] != cost.shape[1]:
        raise ValueError("cost matrix must be square")
    if cost.shape[0] == 0:
        return np.zeros(0, dtype=np.int64)
    return _hungarian(cost)


def distance_matrix(P, Q):
    diff = P[:, None, :] - Q[None, :, :]
    return np.sqrt(np.sum(diff * diff, axis=-1))


def w1_assignment(a, b, cap: int = ASSIGNMENT_CAP) -> W1Result:
    """Exact W1 between equal-size uniform clouds; certificate is the optimal permutation."""
    a, b = _as_cloud(a), _as_cloud(b)
    if a.dim != b.dim:
        raise DimensionMismatch(f"clouds live in dimensions {a.dim} and {b.dim}")
    if a.size != b.size:
        raise UnsupportedWeights(f"assignment needs equal sizes, got {a.size} and {b.size}")
    if not (a.is_uniform and b.is_uniform):
        raise UnsupportedWeights("assignment needs uniform weights")
    if a.size > cap:
        raise SizeCapExceeded(f"cloud size {a.size} exceeds the assignment cap {cap}")
    cost = distance_matrix(a.points, b.points)
    perm = assignment(cost)
    value = float(np.mean(cost[np.arange(a.size), perm]))
    return W1Result(value, W1Method.ASSIGNMENT, perm)


# --- dual lower bound -------------------------------------------------------------

Probe = Callable[[np.ndarray], np.ndarray]


def check_lipschitz(probe: Probe, points, tol: float = LIP_TOL) -> float:
    """Largest pairwise ratio ``|phi(x) - phi(x')| / |x - x'|`` over ``points``.

    Value differences within a few ulps of the values themselves are treated as
    rounding, so nearly coincident points do not inflate the ratio.
    """
    vals = probe(points)
    mag = np.abs(vals)
    worst = 0.0
    chunk = 512
    for s in range(0, len(points), chunk):
        d = distance_matrix(points[s:s + chunk], points)
        dv = np.abs(vals[s:s + chunk, None] - vals[None, :])
        dv = np.maximum(dv - ROUNDING_ULPS * np.finfo(float).eps * (mag[s:s + chunk, None] + mag[None, :]), 0.0)
        mask = d > 0
        if np.any(mask):
            worst = max(worst, float(np.max(dv[mask] / d[mask])))
        # coincident points must share a value
        if np.any(dv[~mask] > tol):
            return np.inf
    return worst


def w1_dual_lower_bound(a, b, probes: Sequence[Probe]) -> W1Result:
    """``max_phi |sum w_a phi(a) - sum w_b phi(b)|`` over 1-Lipschitz probes.

    Every probe is checked on all support-point pairs first; certificate is
    ``(index of the best probe, its values on a, its values on b)``.
    """
    a, b = _as_cloud(a), _as_cloud(b)
    if a.dim != b.dim:
        raise DimensionMismatch(f"clouds live in dimensions {a.dim} and {b.dim}")
    support = np.unique(np.concatenate([a.points, b.points]), axis=0)
    best, best_k, cert = 0.0, -1, None
    for k, probe in enumerate(probes):
        lip = check_lipschitz(probe, support)
        if lip > 1.0 + LIP_TOL:
            raise ProbeNotLipschitz(f"probe {k} has empirical Lipschitz constant {lip:.6g}")
        va, vb = probe(a.points), probe(b.points)
        gap = abs(float(a.weights @ va - b.weights @ vb))
        if gap > best or best_k < 0:
            best, best_k, cert = gap, k, (k, va, vb)
    return W1Result(best, W1Method.DUAL_LOWER_BOUND, cert)


def projection_probe(direction) -> Probe:
    d = np.asarray(direction, dtype=float)
    d = d / np.linalg.norm(d)
    return lambda X: np.atleast_2d(X) @ d


def distance_probe(center) -> Probe:
    c = np.asarray(center, dtype=float)
    return lambda X: np.linalg.norm(np.atleast_2d(X) - c, axis=1)


def cdf_gap_probe(a, b) -> Probe:
    """In 1D, the potential ``phi(x) = int_{-inf}^x sign(F_a - F_b)``; attains W1 exactly."""
    a, b = _as_cloud(a), _as_cloud(b)
    x = np.concatenate([a.points[:, 0], b.points[:, 0]])
    w = np.concatenate([a.weights, -b.weights])
    order = np.argsort(x, kind="stable")
    xs = x[order]
    sgn = np.sign(np.cumsum(w[order]))[:-1]
    knots = np.concatenate([[0.0], np.cumsum(sgn * np.diff(xs))])

    def phi(X):
        return np.interp(np.atleast_2d(X)[:, 0], xs, knots)

    return phi


def default_probes(a, b, rng: np.random.Generator, n_directions: int = 16,
                   n_centers: int = 16) -> list:
    """Projection probes plus distance-to-support probes; in 1D also the exact potential."""
    a, b = _as_cloud(a), _as_cloud(b)
    dim = a.dim
    probes = [projection_probe(e) for e in np.eye(dim)]
    if dim > 1:
        probes += [projection_probe(d) for d in rng.standard_normal((n_directions, dim))]
    support = np.concatenate([a.points, b.points])
    idx = rng.choice(len(support), size=min(n_centers, len(support)), replace=False)
    probes += [distance_probe(support[i]) for i in np.sort(idx)]
    if dim == 1:
        probes.append(cdf_gap_probe(a, b))
    return probes
