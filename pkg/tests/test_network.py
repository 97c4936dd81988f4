import copy
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hydrodispatch.network import (
    ChpUnit,
    InstanceError,
    bundled_instance_path,
    instance_from_dict,
    instance_to_dict,
    load_instance,
    save_instance,
    validate_chp_polygon,
)


def raw(name):
    return json.loads(bundled_instance_path(name).read_text())


def chp(vertices, a3=1.0, a4=1.0, a5=0.0):
    return ChpUnit("C", "B1", "S", np.asarray(vertices, float), (0, 0, 0, a3, a4, a5), (1, 1), (1, 1))


def test_pipe_example_loads(pipe_example):
    assert len(pipe_example.pipelines) == 1
    p = pipe_example.pipelines[0]
    assert p.length == 1750.0 and p.area == 0.5


def test_six_bus_shape(six_bus):
    assert len(six_bus.grid.buses) == 6
    assert len(six_bus.thermal) == 2
    assert len(six_bus.renewable) == 1
    assert len(six_bus.chp) == 1
    assert len(six_bus.buildings) == 3


def test_zero_period_length_rejected():
    d = raw("pipe-example")
    d["horizon"]["dt_seconds"] = 0
    with pytest.raises(InstanceError, match="dt"):
        instance_from_dict(d)


def test_missing_file_raises():
    with pytest.raises(FileNotFoundError):
        load_instance("/nonexistent/instance.json")


def test_garbage_file_is_parse_error(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text("{not json")
    with pytest.raises(InstanceError):
        load_instance(p)


def test_square_polygon_ok():
    assert validate_chp_polygon(chp([(0, 0), (10, 0), (10, 10), (0, 10)])).ok


def test_cost_convexity_violation():
    rep = validate_chp_polygon(chp([(0, 0), (10, 0), (10, 10), (0, 10)], a5=3.0))
    assert not rep.ok
    assert any("convexity" in v for v in rep.violations)


def test_collinear_vertex_flagged():
    rep = validate_chp_polygon(chp([(0, 0), (5, 0), (10, 0), (10, 10), (0, 10)]))
    assert not rep.ok


def test_nonconvex_polygon_flagged():
    rep = validate_chp_polygon(chp([(0, 0), (10, 0), (4, 4), (10, 10), (0, 10)]))
    assert not rep.ok


def test_history_depth_computed_when_omitted():
    d = raw("pipe-example")
    del d["dhs"]["pipelines"][0]["history_depth"]
    # 875 t at 100 kg/s minimum needs ceil(2.43) = 3 hourly periods
    inst = instance_from_dict(d)
    assert inst.pipelines[0].history_depth == 3


def test_zero_min_flow_needs_explicit_depth():
    d = raw("pipe-example")
    del d["dhs"]["pipelines"][0]["history_depth"]
    d["dhs"]["pipelines"][0]["mass_flow_bounds"] = [0.0, 200.0]
    with pytest.raises(InstanceError, match="history_depth"):
        instance_from_dict(d)


def test_shallow_history_rejected():
    d = raw("pipe-example")
    d["dhs"]["pipelines"][0]["history_depth"] = 2
    d["dhs"]["pipelines"][0]["history"] = {"mass_flow": [113.68, 185.52], "inlet_temp": [90, 100]}
    with pytest.raises(InstanceError):
        instance_from_dict(d)


@pytest.mark.parametrize("name", ["pipe-example", "six-bus"])
def test_round_trip(name, tmp_path):
    inst = load_instance(bundled_instance_path(name))
    path = tmp_path / "copy.json"
    save_instance(inst, path)
    again = load_instance(path)
    assert instance_to_dict(again) == instance_to_dict(inst)


def test_defaults_for_constants():
    d = raw("pipe-example")
    d.pop("constants", None)
    inst = instance_from_dict(d)
    assert inst.constants.rho == 1e3 and inst.constants.c == 4.2e3


# mutations that must each be rejected, with the field the error has to name
BREAKERS = [
    (lambda d: d["dhs"]["pipelines"][0].__setitem__("length", -1.0), "length"),
    (lambda d: d["dhs"]["pipelines"][0].__setitem__("area", 0.0), "area"),
    (lambda d: d["dhs"]["pipelines"][0].__setitem__("mass_flow_bounds", [50.0, 10.0]), "mass_flow_bounds"),
    (lambda d: d["dhs"]["nodes"][0].__setitem__("temp_bounds", [100.0, 50.0]), "temp_bounds"),
    (lambda d: d["dhs"]["pipelines"][0].__setitem__("to_node", "nowhere"), "to_node"),
    (lambda d: d["horizon"].__setitem__("periods", 0), "periods"),
    (lambda d: d["units"]["thermal"][0].__setitem__("cost", [1.0, 1.0, -1.0]), "cost"),
    (lambda d: d["units"]["renewable"][0].__setitem__("penalty", -1.0), "penalty"),
    (lambda d: d["units"]["chp"][0].__setitem__("bus", "B99"), "bus"),
    (lambda d: d["dhs"]["buildings"][0].__setitem__("volume", 0.0), "volume"),
]


@settings(max_examples=60, deadline=None)
@given(picks=st.lists(st.integers(0, len(BREAKERS) - 1), min_size=0, max_size=3, unique=True), scale=st.floats(0.5, 2.0))
def test_random_instances_valid_or_named_error(picks, scale):
    base = raw("six-bus")
    d = copy.deepcopy(base)
    # a harmless rescaling keeps the instance valid
    for p in d["dhs"]["pipelines"]:
        p["length"] = p["length"] * min(scale, 1.0)
    for k in picks:
        BREAKERS[k][0](d)
    if not picks:
        instance_from_dict(d)
        return
    with pytest.raises(InstanceError) as err:
        instance_from_dict(d)
    assert any(BREAKERS[k][1] in str(err.value) for k in picks)
