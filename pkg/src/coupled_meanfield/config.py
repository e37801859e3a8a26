"""Simulation config: TOML text <-> validated :class:`SimulationConfig`.

Every field has an explicit default, so ``parse(serialize(cfg)) == cfg``.
Validation collects all problems before raising, each tagged with the dotted
path of the offending key.
"""

from __future__ import annotations

import zlib
from dataclasses import asdict, dataclass, field as dc_field, fields
from typing import Optional

import numpy as np
import tomli
import tomli_w

from . import constraints, forces
from .dynamics import SCHEMES
from .errors import ParseError, ValidationError
from .meanfield import DISTRIBUTIONS, Distribution

MODEL_PARAMS = {
    "linear": {"B"},
    "shift": {"B", "profile"},
    "warped": {"eps", "B", "profile"},
}


@dataclass
class ModelSpec:
    name: str = "linear"
    dim_x: int = 1
    dim_y: int = 1
    params: dict = dc_field(default_factory=lambda: {"B": 1.0})


@dataclass
class FieldSpec:
    name: str = "harmonic"
    mass: float = 1.0
    k0: float = 1.0
    k1: float = 1.0


@dataclass
class InitialSpec:
    y: list = dc_field(default_factory=lambda: [0.0])
    v: list = dc_field(default_factory=lambda: [0.0])
    # explicit particles (and optional weights) take precedence over a distribution
    particles: Optional[list] = None
    weights: Optional[list] = None
    N: int = 1
    distribution: str = "uniform"
    sampling: str = "iid"   # iid | quantile
    low: list = dc_field(default_factory=lambda: [-1.0])
    high: list = dc_field(default_factory=lambda: [1.0])
    mean: list = dc_field(default_factory=lambda: [0.0])
    std: list = dc_field(default_factory=lambda: [1.0])
    point: list = dc_field(default_factory=lambda: [0.0])


@dataclass
class IntegratorSpec:
    scheme: str = "rk4"
    dt: float = 1e-3
    T: float = 1.0
    stride: int = 1


@dataclass
class ConsistencySpec:
    n_bumps: int = 3
    n_times: int = 5
    fd_steps: list = dc_field(default_factory=lambda: [16, 8, 4, 2])  # in recorded time steps
    min_slope: float = 1.8
    residual_floor: float = 1e-9
    tol: float = 1e-12


@dataclass
class StabilitySpec:
    T: float = 5.0
    n_times: int = 20
    dy: list = dc_field(default_factory=lambda: [0.0])
    dv: list = dc_field(default_factory=lambda: [0.0])
    shift: list = dc_field(default_factory=lambda: [0.0])
    jitter: float = 0.0
    slack: float = 0.05
    window_floor: float = 1e-13
    uniqueness_tol: float = 1e-12


@dataclass
class ConvergenceSpec:
    n_values: list = dc_field(default_factory=lambda: [8, 16, 32, 64, 128, 256, 512, 1024])
    seeds: int = 5
    T: float = 2.0
    dt: float = 2e-3
    m_ref: int = 4096
    slope_low: float = -0.65
    slope_high: float = -0.35


@dataclass
class InvariantsSpec:
    system: str = "particles"  # particles | meanfield
    energy_tol: float = 1e-8
    order_ratio: float = 12.0
    constraint_tol: float = 1e-8
    dae_tol: float = 1e-9
    ellipticity_tol: float = 1e-10
    speed_tol: float = 1e-8


@dataclass
class OutputSpec:
    particles: bool = False
    dae_residuals: bool = False


@dataclass
class SimulationConfig:
    seed: int = 0
    model: ModelSpec = dc_field(default_factory=ModelSpec)
    field: FieldSpec = dc_field(default_factory=FieldSpec)
    initial: InitialSpec = dc_field(default_factory=InitialSpec)
    integrator: IntegratorSpec = dc_field(default_factory=IntegratorSpec)
    consistency: ConsistencySpec = dc_field(default_factory=ConsistencySpec)
    stability: StabilitySpec = dc_field(default_factory=StabilitySpec)
    convergence: ConvergenceSpec = dc_field(default_factory=ConvergenceSpec)
    invariants: InvariantsSpec = dc_field(default_factory=InvariantsSpec)
    output: OutputSpec = dc_field(default_factory=OutputSpec)

    def build_model(self):
        return build_model(self.model)

    def build_field(self):
        return build_field(self.field)

    def distribution(self) -> Distribution:
        ini = self.initial
        return Distribution(ini.distribution, tuple(ini.low), tuple(ini.high), tuple(ini.mean),
                            tuple(ini.std), tuple(ini.point), dim=self.model.dim_x)

    def to_dict(self) -> dict:
        return _strip_none(asdict(self))


_SPEC_TYPES = {
    "model": ModelSpec, "field": FieldSpec, "initial": InitialSpec, "integrator": IntegratorSpec,
    "consistency": ConsistencySpec, "stability": StabilitySpec, "convergence": ConvergenceSpec,
    "invariants": InvariantsSpec, "output": OutputSpec,
}


def _strip_none(d):
    if isinstance(d, dict):
        return {k: _strip_none(v) for k, v in d.items() if v is not None}
    return d


def build_model(spec: ModelSpec):
    return constraints.CATALOGUE[spec.name](dim_x=spec.dim_x, dim_y=spec.dim_y, **spec.params)


def build_field(spec: FieldSpec):
    return forces.make_field(spec.name, spec.mass, spec.k0, spec.k1)


def rng_for(seed: int, label: str) -> np.random.Generator:
    """Independent stream for one logical consumer, derived from the master seed."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), zlib.crc32(label.encode())]))


# --- coercion and validation ---------------------------------------------------------

class _Collector:
    def __init__(self):
        self.errors = []

    def add(self, path, msg):
        self.errors.append((path, msg))


def _is_number(x):
    return isinstance(x, (int, float)) and not isinstance(x, bool)


def _coerce(value, default, path, errs):
    """Convert a TOML value to the type implied by the field's default."""
    if isinstance(default, bool):
        if not isinstance(value, bool):
            errs.add(path, f"expected a boolean, got {value!r}")
            return default
        return value
    if isinstance(default, int):
        if not (isinstance(value, int) and not isinstance(value, bool)):
            errs.add(path, f"expected an integer, got {value!r}")
            return default
        return value
    if isinstance(default, float):
        if not _is_number(value):
            errs.add(path, f"expected a number, got {value!r}")
            return default
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            errs.add(path, f"expected a string, got {value!r}")
            return default
        return value
    return value


def _float_list(value, path, errs):
    if _is_number(value):
        return [float(value)]
    if isinstance(value, list) and all(_is_number(x) for x in value):
        return [float(x) for x in value]
    errs.add(path, f"expected a number or a list of numbers, got {value!r}")
    return None


def _section(cls, raw, path, errs):
    if not isinstance(raw, dict):
        errs.add(path, "expected a table")
        return cls()
    spec = cls()
    known = {f.name for f in fields(cls)}
    for key, value in raw.items():
        sub = f"{path}.{key}"
        if key not in known:
            errs.add(sub, "unknown key")
            continue
        default = getattr(spec, key)
        if key == "params":
            if not isinstance(value, dict):
                errs.add(sub, "expected a table")
                continue
            setattr(spec, key, _params(value, sub, errs))
        elif key == "particles" and cls is InitialSpec:
            setattr(spec, key, _particles(value, sub, errs))
        elif key == "fd_steps" or key == "n_values":
            if isinstance(value, list) and value and all(
                    isinstance(x, int) and not isinstance(x, bool) and x > 0 for x in value):
                setattr(spec, key, list(value))
            else:
                errs.add(sub, "expected a non-empty list of positive integers")
        elif isinstance(default, list) or key == "weights":
            vals = _float_list(value, sub, errs)
            if vals is not None:
                setattr(spec, key, vals)
        else:
            setattr(spec, key, _coerce(value, default, sub, errs))
    return spec


def _params(raw, path, errs):
    out = {}
    for key, value in raw.items():
        if key == "B":
            if _is_number(value):
                out[key] = float(value)
            elif isinstance(value, list) and value and all(
                    isinstance(r, list) and r and all(_is_number(x) for x in r) for r in value):
                out[key] = [[float(x) for x in r] for r in value]
            else:
                errs.add(f"{path}.B", "expected a number or a matrix (list of rows)")
        elif key == "eps":
            if _is_number(value):
                out[key] = float(value)
            else:
                errs.add(f"{path}.eps", f"expected a number, got {value!r}")
        else:
            out[key] = value
    return out


def _particles(value, path, errs):
    if isinstance(value, list) and value and all(_is_number(x) for x in value):
        return [[float(x)] for x in value]
    if isinstance(value, list) and value and all(
            isinstance(r, list) and r and all(_is_number(x) for x in r) for r in value):
        return [[float(x) for x in r] for r in value]
    errs.add(path, "expected a list of points")
    return None


def _check_vec(vals, n, path, errs, allow_scalar=False):
    if vals is None:
        return
    if len(vals) != n and not (allow_scalar and len(vals) == 1):
        errs.add(path, f"has {len(vals)} entries, expected {n} (dimension mismatch)")


def validate(cfg: SimulationConfig, errs: Optional[_Collector] = None) -> list:
    """Return every ``(path, message)`` problem with ``cfg``."""
    errs = errs or _Collector()
    m = cfg.model
    nx, ny = m.dim_x, m.dim_y
    if m.name not in constraints.CATALOGUE:
        errs.add("model.name", f"unknown model {m.name!r}; expected one of {sorted(constraints.CATALOGUE)}")
    else:
        bad = set(m.params) - MODEL_PARAMS[m.name]
        for key in sorted(bad):
            errs.add(f"model.params.{key}", f"not a parameter of model {m.name!r}")
    if nx < 1:
        errs.add("model.dim_x", "must be a positive integer")
    if ny < 1:
        errs.add("model.dim_y", "must be a positive integer")
    if m.name in constraints.CATALOGUE and nx >= 1 and ny >= 1 and not any(
            p.startswith("model.") for p, _ in errs.errors):
        try:
            build_model(m)
        except (ValueError, TypeError) as exc:
            errs.add("model.params", str(exc))

    f = cfg.field
    if f.name not in forces.POTENTIALS:
        errs.add("field.name", f"unknown field {f.name!r}; expected one of {sorted(forces.POTENTIALS)}")
    if not f.mass > 0:
        errs.add("field.mass", "particle mass must be positive")

    ini = cfg.initial
    _check_vec(ini.y, ny, "initial.y", errs)
    _check_vec(ini.v, ny, "initial.v", errs)
    if ini.particles is not None:
        for i, p in enumerate(ini.particles):
            if len(p) != nx:
                errs.add(f"initial.particles[{i}]",
                         f"has dimension {len(p)}, model dim_x is {nx} (dimension mismatch)")
                break
        if ini.weights is not None:
            w = np.asarray(ini.weights)
            if len(w) != len(ini.particles):
                errs.add("initial.weights", f"{len(w)} weights for {len(ini.particles)} particles")
            elif np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
                errs.add("initial.weights", "weights must be nonnegative and sum to 1")
    else:
        if ini.weights is not None:
            errs.add("initial.weights", "weights need explicit particles")
        if ini.N < 1:
            errs.add("initial.N", "need N >= 1")
        if ini.distribution not in DISTRIBUTIONS:
            errs.add("initial.distribution", f"expected one of {DISTRIBUTIONS}")
        if ini.sampling not in ("iid", "quantile"):
            errs.add("initial.sampling", "expected 'iid' or 'quantile'")
        if ini.sampling == "quantile" and nx > 2:
            errs.add("initial.sampling", "quantile clouds exist for dim_x <= 2 only")
        if ini.sampling == "quantile" and nx == 2 and round(ini.N ** 0.5) ** 2 != ini.N:
            errs.add("initial.N", "a 2D quantile cloud needs a square number of nodes")
        for key in ("low", "high", "mean", "std", "point"):
            _check_vec(getattr(ini, key), nx, f"initial.{key}", errs, allow_scalar=True)
        if ini.distribution in DISTRIBUTIONS and not any(p.startswith("initial.") for p, _ in errs.errors):
            try:
                cfg.distribution()
            except ValueError as exc:
                errs.add("initial", str(exc))

    it = cfg.integrator
    if it.scheme not in SCHEMES:
        errs.add("integrator.scheme", f"expected one of {SCHEMES}")
    if not it.dt > 0:
        errs.add("integrator.dt", "must be positive")
    if not it.T >= 0:
        errs.add("integrator.T", "must be nonnegative")
    if it.stride < 1:
        errs.add("integrator.stride", "must be >= 1")

    c = cfg.consistency
    if c.n_bumps < 1:
        errs.add("consistency.n_bumps", "must be >= 1")
    if c.n_times < 1:
        errs.add("consistency.n_times", "must be >= 1")
    if len(c.fd_steps) < 2:
        errs.add("consistency.fd_steps", "need at least two step sizes for an order study")

    s = cfg.stability
    if not s.T > 0:
        errs.add("stability.T", "must be positive")
    if s.n_times < 2:
        errs.add("stability.n_times", "need at least two time points")
    _check_vec(s.dy, ny, "stability.dy", errs)
    _check_vec(s.dv, ny, "stability.dv", errs)
    _check_vec(s.shift, nx, "stability.shift", errs, allow_scalar=True)
    if s.jitter < 0:
        errs.add("stability.jitter", "must be nonnegative")

    cv = cfg.convergence
    if cv.seeds < 1:
        errs.add("convergence.seeds", "need at least one seed")
    if not cv.T >= 0:
        errs.add("convergence.T", "must be nonnegative")
    if not cv.dt > 0:
        errs.add("convergence.dt", "must be positive")
    if cv.m_ref < 1:
        errs.add("convergence.m_ref", "must be positive")
    if not cv.slope_low <= cv.slope_high:
        errs.add("convergence.slope_low", "must not exceed slope_high")

    if cfg.invariants.system not in ("particles", "meanfield"):
        errs.add("invariants.system", "expected 'particles' or 'meanfield'")
    if not 0 <= cfg.seed < 2 ** 64:
        errs.add("seed", "must be an unsigned 64-bit integer")
    return errs.errors


def from_dict(raw: dict) -> SimulationConfig:
    errs = _Collector()
    cfg = SimulationConfig()
    for key, value in raw.items():
        if key == "seed":
            if isinstance(value, int) and not isinstance(value, bool):
                cfg.seed = value
            else:
                errs.add("seed", f"expected an integer, got {value!r}")
        elif key in _SPEC_TYPES:
            setattr(cfg, key, _section(_SPEC_TYPES[key], value, key, errs))
        else:
            errs.add(key, "unknown section")
    # mistyped values were replaced by defaults, so the remaining checks still run
    validate(cfg, errs)
    if errs.errors:
        raise ValidationError(errs.errors)
    return cfg


def parse_config(text: str) -> SimulationConfig:
    """Parse and validate TOML text. Raises ParseError or ValidationError."""
    try:
        raw = tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        msg = str(exc).split(" (at line")[0]
        raise ParseError(msg, getattr(exc, "lineno", None), getattr(exc, "colno", None)) from exc
    return from_dict(raw)


def load_config(path) -> SimulationConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())


def serialize(cfg: SimulationConfig) -> str:
    return tomli_w.dumps(cfg.to_dict())


def packaged_config(name: str) -> SimulationConfig:
    """One of the configs shipped with the package (``default``, ``stability``, ...)."""
    from importlib import resources

    text = resources.files("coupled_meanfield").joinpath("configs", f"{name}.toml").read_text("utf-8")
    return parse_config(text)


def packaged_config_names() -> list:
    from importlib import resources

    root = resources.files("coupled_meanfield").joinpath("configs")
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".toml"))
