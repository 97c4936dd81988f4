import dataclasses

import numpy as np
import pytest

from hydrodispatch.building import (
    BuildingState,
    assemble_building_constraints,
    building_residuals,
    building_step,
    required_heat,
    simulate_building,
)
from hydrodispatch.network import BuildingSpec, Constants, Wall
from oracles import euler_building

DT = 3600.0


def isothermal_spec(T=24, temp=15.0, n_walls=2, ns=3, conv=7.0, phi=2.0):
    Y = np.array([0.3, 0.2, 0.1, 0.0][: ns + 1])
    Z = np.array([1.5, -0.5, -0.3, -0.1][: ns + 1])
    Z = Z - (Z.sum() - Y.sum()) * np.eye(ns + 1)[0]  # sum Y = sum Z
    rad = np.full((n_walls, n_walls), phi)
    np.fill_diagonal(rad, 0.0)
    return BuildingSpec(
        id="b",
        dhs_node="L",
        room_count=1,
        volume=300.0,
        ventilation=np.zeros(T),
        walls=tuple(Wall(50.0 + 10 * i, conv) for i in range(n_walls)),
        radiation=rad,
        Y=Y,
        Z=Z,
        internal_gain=np.zeros(T),
        t_room_min=np.full(T, 18.0),
        t_room_max=np.full(T, 24.0),
        outdoor_temp=np.full(T, temp),
        outdoor_history=np.full(ns, temp),
        wall_history=np.full((n_walls, ns), temp),
        room_history=np.full(ns, temp),
    )


def test_isothermal_fixed_point():
    spec = isothermal_spec()
    st = simulate_building(spec, np.zeros(24), DT)
    np.testing.assert_allclose(st.t_room, 15.0, atol=1e-10)
    np.testing.assert_allclose(st.t_wall, 15.0, atol=1e-10)


def test_convection_dominated_wall_tracks_room():
    gaps = []
    for h in (10.0, 1e3, 1e6):
        spec = isothermal_spec(n_walls=1, conv=h, phi=0.0)
        spec = dataclasses.replace(spec, outdoor_temp=np.full(24, -5.0))
        st = simulate_building(spec, np.full(24, 4000.0), DT)
        gaps.append(np.max(np.abs(st.t_wall[0] - st.t_room)))
    assert gaps[0] > gaps[1] > gaps[2]
    assert gaps[2] < 1e-3


def test_matches_whole_horizon_solve(six_bus):
    spec = six_bus.buildings[0]
    heat = np.where(np.arange(24) >= 6, 9000.0, 3000.0)  # step input
    st = simulate_building(spec, heat, DT, six_bus.constants)
    walls, room = euler_building(spec, heat, DT, six_bus.constants)
    np.testing.assert_allclose(st.t_room, room, atol=1e-8)
    np.testing.assert_allclose(st.t_wall, walls, atol=1e-8)


def test_residuals_tiny_on_simulation(six_bus):
    rng = np.random.default_rng(1)
    for spec in six_bus.buildings:
        st = simulate_building(spec, rng.uniform(0, 12000, 24), DT, six_bus.constants)
        wr, ar = building_residuals(spec, st, DT, six_bus.constants)
        assert np.abs(wr).max() <= 1e-9 and np.abs(ar).max() <= 1e-9


def test_residuals_flag_wrong_state(six_bus):
    spec = six_bus.buildings[0]
    st = simulate_building(spec, np.full(24, 5000.0), DT, six_bus.constants)
    st.t_room[5] += 0.5
    _, ar = building_residuals(spec, st, DT, six_bus.constants)
    assert np.abs(ar).max() > 1e-4


def test_row_counts_one_period_one_wall():
    spec = isothermal_spec(T=1, n_walls=1, phi=0.0)
    bc = assemble_building_constraints(spec, 1, DT)
    assert bc.A_eq.shape[0] == 2
    assert bc.G.shape[0] == 2


def _state_vector(bc, st):
    z = np.zeros(bc.n_vars)
    z[bc.index["t_wall"]] = st.t_wall
    z[bc.index["t_room"]] = st.t_room
    z[bc.index["heat_input"]] = st.heat_input
    return z


def test_simulation_satisfies_assembled_constraints(six_bus):
    rng = np.random.default_rng(4)
    for spec in six_bus.buildings:
        st = simulate_building(spec, rng.uniform(0, 12000, 24), DT, six_bus.constants)
        bc = assemble_building_constraints(spec, 24, DT, six_bus.constants)
        z = _state_vector(bc, st)
        r = bc.A_eq @ z - bc.b_eq
        scale = np.abs(bc.A_eq).max(axis=1).toarray().ravel() * np.abs(z).max()
        assert np.max(np.abs(r) / np.maximum(scale, 1.0)) <= 1e-9


def test_assembled_constraints_reproduce_simulation(six_bus):
    # solve the equality block for temperatures given the heat input: must equal simulate
    spec = six_bus.buildings[1]
    heat = np.linspace(2000, 9000, 24)
    bc = assemble_building_constraints(spec, 24, DT, six_bus.constants)
    A = bc.A_eq.toarray()
    hi = bc.index["heat_input"]
    rest = np.setdiff1d(np.arange(bc.n_vars), hi)
    sol = np.linalg.solve(A[:, rest], bc.b_eq - A[:, hi] @ heat)
    z = np.zeros(bc.n_vars)
    z[rest] = sol
    z[hi] = heat
    st = simulate_building(spec, heat, DT, six_bus.constants)
    np.testing.assert_allclose(z[bc.index["t_room"]], st.t_room, atol=1e-9)
    np.testing.assert_allclose(z[bc.index["t_wall"]], st.t_wall, atol=1e-9)


def test_required_heat_inverts_simulation(six_bus):
    spec = six_bus.buildings[2]
    target = np.full(24, 20.0)
    st = required_heat(spec, target, DT, six_bus.constants)
    back = simulate_building(spec, st.heat_input, DT, six_bus.constants)
    np.testing.assert_allclose(back.t_room, target, atol=1e-9)


def test_fixed_room_pins_lower_bound(six_bus):
    spec = six_bus.buildings[0]
    bc = assemble_building_constraints(spec, 24, DT, six_bus.constants, fixed_room=True)
    # rows t_room <= t_min and -t_room <= -t_min
    np.testing.assert_array_equal(bc.h[:24], spec.t_room_min)
    np.testing.assert_array_equal(bc.h[24:], -spec.t_room_min)
    assert np.all(spec.t_room_min == 20.0)


def test_heat_load_lags_outdoor_temperature(six_bus):
    spec = six_bus.buildings[0]
    T = 96
    hours = np.arange(T)
    spec = dataclasses.replace(
        spec,
        ventilation=np.full(T, spec.ventilation[0]),
        internal_gain=np.full(T, 1000.0),
        t_room_min=np.full(T, 20.0),
        t_room_max=np.full(T, 24.0),
        outdoor_temp=-5 + 5 * np.sin(2 * np.pi * (hours - 9) / 24),
    )
    q = required_heat(spec, np.full(T, 20.0), DT, six_bus.constants).heat_input
    day = slice(72, 96)  # well after the start-up transient
    t_max = int(np.argmax(spec.outdoor_temp[day]))
    q_min = int(np.argmin(q[day]))
    assert (q_min - t_max) % 24 > 0


def test_single_step_api(six_bus):
    spec = six_bus.buildings[0]
    st = BuildingState.empty(spec, 2)
    tw, tr = building_step(spec, st, 0, 5000.0, DT, six_bus.constants)
    ref = simulate_building(spec, np.array([5000.0]), DT, six_bus.constants)
    assert tr == pytest.approx(ref.t_room[0])
    np.testing.assert_allclose(tw, ref.t_wall[:, 0])


def test_default_histories_isothermal_at_floor():
    from hydrodispatch.network import instance_from_dict
    import json
    from hydrodispatch.network import bundled_instance_path

    d = json.loads(bundled_instance_path("six-bus").read_text())
    del d["dhs"]["buildings"][0]["history"]
    inst = instance_from_dict(d)
    b = inst.buildings[0]
    np.testing.assert_array_equal(b.room_history, 20.0)
    np.testing.assert_array_equal(b.wall_history, 20.0)
    assert Constants().c_air > 0
