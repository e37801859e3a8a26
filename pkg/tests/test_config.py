import numpy as np
import pytest

from coupled_meanfield import config as cfgmod
from coupled_meanfield.errors import ParseError, ValidationError

MINIMAL = """
[model]
name = "linear"

[field]
name = "harmonic"

[initial]
particles = [[0.0], [1.0]]

[integrator]
dt = 0.01
T = 1.0
"""


def _paths(text):
    with pytest.raises(ValidationError) as info:
        cfgmod.parse_config(text)
    return [p for p, _ in info.value.errors]


def test_minimal_config_accepted():
    cfg = cfgmod.parse_config(MINIMAL)
    assert cfg.model.name == "linear"
    assert len(cfg.initial.particles) == 2


def test_zero_dt_rejected_at_path():
    assert "integrator.dt" in _paths(MINIMAL.replace("dt = 0.01", "dt = 0.0"))


def test_dimension_mismatch_rejected():
    text = MINIMAL.replace('name = "linear"', 'name = "linear"\ndim_x = 2\n[model.params]\nB = [[1.0], [1.0]]')
    paths = _paths(text)
    assert any(p.startswith("initial.particles") for p in paths)


def test_all_errors_collected():
    text = MINIMAL.replace("dt = 0.01", "dt = -1.0").replace("T = 1.0", "T = -2.0") \
        .replace('name = "harmonic"', 'name = "quartic"')
    paths = set(_paths(text))
    assert {"integrator.dt", "integrator.T", "field.name"} <= paths


def test_type_errors_reported():
    paths = _paths(MINIMAL.replace("T = 1.0", 'T = "long"'))
    assert "integrator.T" in paths


def test_unknown_keys_reported():
    paths = _paths(MINIMAL + "\n[extra]\nx = 1\n")
    assert "extra" in paths


def test_parse_error_has_location():
    with pytest.raises(ParseError) as info:
        cfgmod.parse_config("[model]\nname = \n")
    assert info.value.line == 2
    assert info.value.column is not None


@pytest.mark.parametrize("name", cfgmod.packaged_config_names())
def test_round_trip(name):
    cfg = cfgmod.packaged_config(name)
    again = cfgmod.parse_config(cfgmod.serialize(cfg))
    assert again == cfg
    assert cfgmod.serialize(again) == cfgmod.serialize(cfg)


def test_rng_streams_are_independent_and_stable():
    a = cfgmod.rng_for(7, "initial").random(3)
    b = cfgmod.rng_for(7, "initial").random(3)
    c = cfgmod.rng_for(7, "probes").random(3)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)


def test_weights_validated():
    text = MINIMAL.replace("particles = [[0.0], [1.0]]", "particles = [[0.0], [1.0]]\nweights = [0.5, 0.6]")
    assert "initial.weights" in _paths(text)
