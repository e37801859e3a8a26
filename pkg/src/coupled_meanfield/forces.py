"""Potentials and conservative forces for the macroscopic component and the particles.

Potentials act on the last axis: ``w(x)`` maps ``(..., d)`` to ``(...)`` and the
matching force maps ``(..., d)`` to ``(..., d)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np


def _harmonic(k):
    def w(x):
        return 0.5 * k * np.sum(x * x, axis=-1)

    def f(x):
        return -k * x

    return w, f


def _soft(k):
    # k (sqrt(1 + |x|^2) - 1): quadratic near 0, linear growth, |force| <= k
    def w(x):
        return k * (np.sqrt(1.0 + np.sum(x * x, axis=-1)) - 1.0)

    def f(x):
        return -k * x / np.sqrt(1.0 + np.sum(x * x, axis=-1))[..., None]

    return w, f


POTENTIALS = {"harmonic": _harmonic, "soft": _soft}
_POTENTIAL_CODES = {"harmonic": 0, "soft": 1}


@dataclass(frozen=True)
class ForceField:
    w0: Callable[[np.ndarray], np.ndarray]
    w1: Callable[[np.ndarray], np.ndarray]
    f0: Callable[[np.ndarray], np.ndarray]
    f1: Callable[[np.ndarray], np.ndarray]
    particle_mass: float
    name: str = "custom"
    nonnegative: bool = False  # both potentials >= 0 everywhere
    # (macro potential code, k0, particle potential code, k1) for the compiled kernel
    kernel: Optional[tuple] = field(default=None, compare=False, repr=False)

    def generic(self) -> "ForceField":
        return replace(self, kernel=None)


def make_field(name: str, mass: float = 1.0, k0: float = 1.0, k1: float = 1.0) -> ForceField:
    """Built-in field: ``"harmonic"`` or ``"soft"`` potentials on both components."""
    try:
        build = POTENTIALS[name]
    except KeyError:
        raise ValueError(f"unknown force field {name!r}; expected one of {sorted(POTENTIALS)}") from None
    if mass < 0:
        raise ValueError("particle mass must be nonnegative")
    w0, f0 = build(k0)
    w1, f1 = build(k1)
    code = _POTENTIAL_CODES[name]
    return ForceField(w0, w1, f0, f1, float(mass), name=name, nonnegative=k0 >= 0 and k1 >= 0,
                      kernel=(code, float(k0), code, float(k1)))


def harmonic(mass=1.0, k0=1.0, k1=1.0) -> ForceField:
    return make_field("harmonic", mass, k0, k1)


def soft(mass=1.0, k0=1.0, k1=1.0) -> ForceField:
    return make_field("soft", mass, k0, k1)


def eval_forces(field: ForceField, X, y):
    """Return ``(F1(X), F0(y))``."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    return field.f1(X), field.f0(y)
