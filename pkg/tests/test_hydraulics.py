import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hydrodispatch.building import required_heat
from hydrodispatch.hydraulics import (
    HydraulicState,
    continuity_residual,
    mixing_residual,
    network_heat_balance,
    propagate_network,
    pressure_residual,
    pump_power,
    solve_pressures,
)
from hydrodispatch.network import FlowHistory, bundled_instance_path, instance_from_dict
from hydrodispatch.pipeline import wmm_outlet


def chain_instance(k=0.1, h_in=50.0, h_out=40.0):
    d = {
        "horizon": {"periods": 1, "dt_seconds": 3600.0},
        "dhs": {
            "nodes": [
                {"id": "A", "role": "source", "temp_bounds": [0, 150], "pressure_bounds": [0, 1e6]},
                {"id": "B", "role": "load", "temp_bounds": [0, 150], "pressure_bounds": [0, 1e6]},
            ],
            "pipelines": [
                {
                    "id": "P",
                    "from_node": "A",
                    "to_node": "B",
                    "length": 100.0,
                    "area": 0.1,
                    "heat_transfer_coeff": 0.0,
                    "ambient_temp": 5.0,
                    "resistance": k,
                    "mass_flow_bounds": [1.0, 50.0],
                    "history_depth": 3,
                    "history": {"mass_flow": [10.0] * 3, "inlet_temp": [80.0] * 3},
                    "schedule": {"mass_flow": [10.0]},
                }
            ],
        },
    }
    return instance_from_dict(d)


def test_pressure_residual_consistent_triple():
    inst = chain_instance()
    state = HydraulicState(np.array([[50.0], [40.0]]), np.zeros((1, 1)), np.array([[10.0]]))
    assert pressure_residual(inst, state, 0)[0] == pytest.approx(0.0)


def test_pressure_residual_rest_state():
    inst = chain_instance()
    state = HydraulicState(np.array([[7.0], [7.0]]), np.zeros((1, 1)), np.zeros((1, 1)))
    assert pressure_residual(inst, state, 0)[0] == 0.0


def test_pump_power_values():
    assert pump_power(100.0, 0.0, 0.8) == 0.0
    assert pump_power(100.0, 1e5, 1.0, 1e3) == pytest.approx(0.01)
    assert pump_power(200.0, 1e5, 0.7) == pytest.approx(2 * pump_power(100.0, 1e5, 0.7))
    with pytest.raises(ValueError):
        pump_power(1.0, 1.0, 0.0)
    with pytest.raises(ValueError):
        pump_power(1.0, 1.0, 1.5)


def test_mixing_cases():
    c = 4.2e3
    assert mixing_residual([50.0], [75.0], [50.0], 75.0, 0.0, c) == 0.0
    assert mixing_residual([10.0, 10.0], [80.0, 100.0], [20.0], 90.0, 0.0, c) == pytest.approx(0.0)
    # load node: heat taken out equals the temperature drop of the stream
    q = c * 100 * (60 - 90)
    assert mixing_residual([100.0], [90.0], [100.0], 60.0, q, c) == pytest.approx(0.0)


def test_chain_reproduces_pipe_outlet(pipe_example):
    res = propagate_network(pipe_example)
    p = pipe_example.pipelines[0]
    hist = FlowHistory.from_pipe(p)
    ref = wmm_outlet(p, hist, 0, pipe_example.horizon.dt, pipe_example.constants)
    # the source sets its own temperature through its heat schedule
    assert res.node_temp[0, 0] == pytest.approx(110.0, abs=1e-9)
    assert res.outlet_temp[0, 0] == pytest.approx(ref.t_out, abs=1e-9)
    assert res.node_temp[1, 0] == pytest.approx(ref.t_out, abs=1e-9)
    assert abs(res.node_temp[1, 0] - 95.194) < 0.01


def _six_bus_heat(inst):
    T = inst.horizon.periods
    heat = np.zeros((len(inst.nodes), T))
    for j, nd in enumerate(inst.nodes):
        if nd.heat_schedule is not None:
            heat[j] = nd.heat_schedule
        for b in inst.buildings:
            if b.dhs_node == nd.id:
                heat[j] -= required_heat(b, b.t_room_min, inst.horizon.dt, inst.constants).heat_input * b.room_count / 1e6
    return heat


def test_six_bus_mixing_and_identity(six_bus):
    heat = _six_bus_heat(six_bus)
    res = propagate_network(six_bus, heat=heat)
    flows = np.array([p.schedule.mass_flow for p in six_bus.pipelines])
    idx = six_bus.node_index()
    c = six_bus.constants.c
    worst = 0.0
    for tau in range(six_bus.horizon.periods):
        for nd in six_bus.nodes:
            ins, outs = six_bus.in_pipes(nd.id), six_bus.out_pipes(nd.id)
            m_in = [flows[b, tau] for b in ins]
            t_in = [res.outlet_temp[b, tau] for b in ins]
            if nd.return_node is not None:
                r = nd.return_node
                m_in.append(sum(flows[b, tau] for b in six_bus.in_pipes(r)))
                t_in.append(res.node_temp[idx[r], tau])
            m_out = [flows[b, tau] for b in (outs if outs else ins)]
            r_ = mixing_residual(m_in, t_in, m_out, res.node_temp[idx[nd.id], tau], heat[idx[nd.id], tau] * 1e6, c)
            worst = max(worst, abs(r_) / (c * sum(m_out) * 100))
        for b, p in enumerate(six_bus.pipelines):
            assert res.inlet_temp[b, tau] == res.node_temp[idx[p.from_node], tau]
    assert worst <= 1e-9


def test_six_bus_heat_bookkeeping(six_bus):
    heat = _six_bus_heat(six_bus)
    res = propagate_network(six_bus, heat=heat)
    flows = np.array([p.schedule.mass_flow for p in six_bus.pipelines])
    bal = network_heat_balance(six_bus, res, flows, heat)
    lhs = bal["net_injection"]
    rhs = bal["losses"] + bal["storage_change"] + bal["exported"]
    # injected heat at the source, compared against what leaves the water
    scale = float(np.sum(np.clip(heat, 0, None))) * six_bus.horizon.dt / 3.6e9
    assert abs(lhs - rhs) <= 0.005 * scale


def test_continuity_holds_on_schedules(six_bus):
    flows = np.array([p.schedule.mass_flow for p in six_bus.pipelines])
    for tau in range(six_bus.horizon.periods):
        assert np.all(np.abs(continuity_residual(six_bus, flows, tau)) <= 1e-9)


def test_propagate_rejects_broken_continuity(six_bus):
    flows = np.array([p.schedule.mass_flow for p in six_bus.pipelines])
    flows[0, 3] *= 1.05
    with pytest.raises(ValueError, match="continuity"):
        propagate_network(six_bus, flows=flows)


def tree_instance(rng, n_nodes):
    """Random directed tree rooted at node 0 with random resistances."""
    nodes = [{"id": f"N{i}", "role": "junction", "temp_bounds": [0, 150], "pressure_bounds": [0, 1e7]} for i in range(n_nodes)]
    pipes = []
    for i in range(1, n_nodes):
        parent = int(rng.integers(0, i))
        pipes.append(
            {
                "id": f"P{i}",
                "from_node": f"N{parent}",
                "to_node": f"N{i}",
                "length": 100.0,
                "area": 0.1,
                "heat_transfer_coeff": 0.0,
                    "ambient_temp": 5.0,
                "resistance": float(rng.uniform(0.1, 10.0)),
                "mass_flow_bounds": [5.0, 100.0],
                "history_depth": 40,
                "history": {"mass_flow": [50.0] * 40, "inlet_temp": [80.0] * 40},
                "schedule": {"mass_flow": [50.0]},
            }
        )
    return instance_from_dict({"horizon": {"periods": 1, "dt_seconds": 60.0}, "dhs": {"nodes": nodes, "pipelines": pipes}})


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n=st.integers(2, 12))
def test_pressures_by_traversal(seed, n):
    rng = np.random.default_rng(seed)
    inst = tree_instance(rng, n)
    flows = rng.uniform(5.0, 60.0, n - 1)
    pumps = np.where(rng.random(n - 1) < 0.3, rng.uniform(0, 500.0, n - 1), 0.0)
    h = solve_pressures(inst, flows, pumps, "N0", 1e5)
    state = HydraulicState(h[:, None], pumps[:, None], flows[:, None])
    assert np.max(np.abs(pressure_residual(inst, state, 0))) <= 1e-10 * 1e5


def test_six_bus_pressures_from_return(six_bus):
    flows = np.array([p.schedule.mass_flow[0] for p in six_bus.pipelines])
    h = solve_pressures(six_bus, flows, np.zeros(len(flows)), "R", 100e3)
    assert h[six_bus.node_index()["R"]] == 100e3
    assert np.all(np.isfinite(h))


def test_raw_data_has_pumps_on_supply_only():
    d = json.loads(bundled_instance_path("six-bus").read_text())
    for p in d["dhs"]["pipelines"]:
        assert ("pump" in p) == p["id"].startswith("s")
