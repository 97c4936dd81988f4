"""Regenerate the bundled instance files in src/hydrodispatch/data.

The six-bus data is synthetic: a 6-bus grid with two thermal units, one
wind farm and one CHP feeding a star-shaped heating network with three
buildings. Shift factors are computed here from line reactances and frozen
into the JSON.
"""

import json
from pathlib import Path

import numpy as np

OUT = Path(__file__).resolve().parents[1] / "src" / "hydrodispatch" / "data"
T = 24
DT = 3600.0
RHO, C = 1e3, 4.2e3


def pipe_example() -> dict:
    m = [116.10, 113.68, 185.52, 120.21]
    t = [80.0, 90.0, 100.0, 110.0]
    return {
        "name": "pipe-example",
        "horizon": {"periods": 1, "dt_seconds": DT, "start_index": 12},
        "constants": {"rho": RHO, "c": C},
        "dhs": {
            "nodes": [
                {"id": "S", "role": "source", "temp_bounds": [0, 150], "heat_schedule": [C * m[3] * t[3] / 1e6]},
                {"id": "L", "role": "load", "temp_bounds": [0, 150]},
            ],
            "pipelines": [
                {
                    "id": "P1",
                    "from_node": "S",
                    "to_node": "L",
                    "length": 1750.0,
                    "area": 0.5,
                    "heat_transfer_coeff": 0.12,
                    "resistance": 0.0,
                    "mass_flow_bounds": [100.0, 200.0],
                    "ambient_temp": 10.0,
                    "history_depth": 3,
                    "history": {"mass_flow": m[:3], "inlet_temp": t[:3]},
                    "schedule": {"mass_flow": [m[3]], "inlet_temp": [t[3]]},
                }
            ],
        },
    }


def ptdf(buses, lines, slack=0):
    n = len(buses)
    B = np.zeros((n, n))
    Bf = np.zeros((len(lines), n))
    for k, (a, b, x, _) in enumerate(lines):
        i, j = buses.index(a), buses.index(b)
        B[i, i] += 1 / x
        B[j, j] += 1 / x
        B[i, j] -= 1 / x
        B[j, i] -= 1 / x
        Bf[k, i] = 1 / x
        Bf[k, j] = -1 / x
    keep = [k for k in range(n) if k != slack]
    X = np.zeros((n, n))
    X[np.ix_(keep, keep)] = np.linalg.inv(B[np.ix_(keep, keep)])
    return Bf @ X


def response_factors(U: float, ns: int = 24):
    """Synthetic response factors with sum(Y) = sum(Z) = U."""
    j = np.arange(ns + 1)
    shape = j * np.exp(-j / 3.0)
    Y = U * shape / shape.sum()
    z0 = 5.0
    tail = 0.6 ** j[1:]
    Z = np.concatenate([[z0], -(z0 - U) * tail / tail.sum()])
    return Y, Z


def six_bus() -> dict:
    hours = np.arange(T)
    buses = ["B1", "B2", "B3", "B4", "B5", "B6"]
    lines = [
        ("B1", "B2", 0.10, 200.0),
        ("B1", "B4", 0.20, 120.0),
        ("B2", "B3", 0.15, 200.0),
        ("B2", "B4", 0.20, 150.0),
        ("B3", "B6", 0.10, 200.0),
        ("B4", "B5", 0.15, 150.0),
        ("B5", "B6", 0.20, 150.0),
    ]
    K = ptdf(buses, lines)

    # electric demand: low at night, evening peak
    total = 150 + 60 * np.exp(-((hours - 11) ** 2) / 18) + 70 * np.exp(-((hours - 19) ** 2) / 8)
    share = {"B4": 0.4, "B5": 0.3, "B6": 0.3}
    demand = {b: [round(float(total[t] * s), 3) for t in hours] for b, s in share.items()}

    # wind: strong at night, weak around noon
    wind = 55 + 35 * np.cos(2 * np.pi * hours / 24)

    t_out = -5 + 5 * np.sin(2 * np.pi * (hours - 9) / 24)
    Y, Z = response_factors(0.6)

    # wall surface temperatures in steady state with the room at 20 degC
    walls = [(500.0, 7.7), (300.0, 6.0)]
    phi = 5.0
    M = np.array([[-(0.6 + phi + walls[0][1]), phi], [phi, -(0.6 + phi + walls[1][1])]])
    rhs = -np.array([0.6 * t_out[0] + walls[0][1] * 20.0, 0.6 * t_out[0] + walls[1][1] * 20.0])
    t_wall0 = np.linalg.solve(M, rhs)

    def building(bid, node, rooms):
        gain = np.where((hours >= 8) & (hours < 20), 2000.0, 1000.0)
        return {
            "id": bid,
            "dhs_node": node,
            "room_count": rooms,
            "volume": 2000.0,
            "ventilation": 0.28,
            "walls": [{"area": 500.0, "conv_coeff": 7.7}, {"area": 300.0, "conv_coeff": 6.0}],
            "radiation": [[0.0, 5.0], [5.0, 0.0]],
            "response_Y": [round(float(v), 10) for v in Y],
            "response_Z": [round(float(v), 10) for v in Z],
            "internal_gain": gain.tolist(),
            "room_temp_bounds": [20.0, 24.0],
            "outdoor_temp": [round(float(v), 4) for v in t_out],
            "history": {
                "outdoor_temp": [round(float(t_out[0]), 4)] * 24,
                "wall_temp": [[round(float(v), 4)] * 24 for v in t_wall0],
                "room_temp": [20.0] * 24,
            },
        }

    rooms = {"L4": 1250, "L5": 250, "L6": 1100}
    nominal = {"L4": 150.0, "L5": 30.0, "L6": 135.0}
    nodes = [
        {"id": "S", "role": "source", "return_node": "R", "temp_bounds": [70, 120], "pressure_bounds": [100e3, 1000e3]},
        {"id": "L4", "role": "load", "temp_bounds": [30, 70], "pressure_bounds": [100e3, 1000e3]},
        {"id": "L5", "role": "load", "temp_bounds": [30, 70], "pressure_bounds": [100e3, 1000e3]},
        {"id": "L6", "role": "load", "temp_bounds": [30, 70], "pressure_bounds": [100e3, 1000e3]},
        {"id": "R", "role": "junction", "temp_bounds": [30, 70], "pressure_bounds": [100e3, 400e3]},
    ]
    pipes = []
    lengths = {"L4": 5000.0, "L5": 4000.0, "L6": 6000.0}
    for node, m0 in nominal.items():
        area = round(m0 / 600.0, 4)  # about 0.6 m/s at nominal flow
        lo, hi = 0.9 * m0, 1.1 * m0
        depth = int(np.ceil(RHO * area * lengths[node] / (lo * DT)))
        for kind, a, b, temp in (("s", "S", node, 95.0), ("r", node, "R", 55.0)):
            pipe = {
                "id": f"{kind}{node}",
                "from_node": a,
                "to_node": b,
                "length": lengths[node],
                "area": area,
                "heat_transfer_coeff": 0.4,
                "resistance": round(40e3 / m0**2, 6),
                "mass_flow_bounds": [lo, hi],
                "ambient_temp": 5.0,
                "history_depth": depth,
                "history": {"mass_flow": [m0] * depth, "inlet_temp": [temp] * depth},
                "schedule": {"mass_flow": m0},
            }
            if kind == "s":
                pipe["pump"] = {"head_bounds": [0.0, 300e3], "efficiency": 0.8, "bus": "B3"}
            pipes.append(pipe)

    return {
        "name": "six-bus",
        "horizon": {"periods": T, "dt_seconds": DT},
        "constants": {"rho": RHO, "c": C, "rho_air": 1.2, "c_air": 1005.0},
        "grid": {
            "buses": buses,
            "lines": [
                {"id": f"{a}-{b}", "capacity_mw": cap, "shift_factors": [round(float(v), 8) for v in K[k]]}
                for k, (a, b, _, cap) in enumerate(lines)
            ],
            "demand": demand,
            "reserve": {"up_mw": 20.0, "down_mw": 10.0},
        },
        "units": {
            "chp": [
                {
                    "id": "CHP1",
                    "bus": "B3",
                    "dhs_node": "S",
                    "vertices": [[20.0, 0.0], [110.0, 0.0], [95.0, 90.0], [50.0, 90.0]],
                    "cost": [50.0, 14.0, 3.0, 0.03, 0.02, 0.01],
                    "ramp_p": [60.0, 60.0],
                    "ramp_q": [40.0, 40.0],
                }
            ],
            "thermal": [
                {"id": "G1", "bus": "B1", "p_bounds": [10.0, 150.0], "cost": [100.0, 18.0, 0.02], "ramp": [60.0, 60.0]},
                {"id": "G2", "bus": "B2", "p_bounds": [5.0, 100.0], "cost": [80.0, 28.0, 0.03], "ramp": [50.0, 50.0]},
            ],
            "renewable": [
                {"id": "W1", "bus": "B5", "available": [round(float(v), 3) for v in wind], "penalty": 2.0}
            ],
        },
        "dhs": {
            "nodes": nodes,
            "pipelines": pipes,
            "buildings": [building(f"H{n[1:]}", n, r) for n, r in rooms.items()],
        },
    }


def with_source_schedule(doc: dict) -> dict:
    """Give the source a heat schedule for network simulation: building demand
    at the lowest room temperature plus 3% for pipe losses."""
    from hydrodispatch.building import required_heat
    from hydrodispatch.network import instance_from_dict

    inst = instance_from_dict(doc)
    total = np.zeros(T)
    for b in inst.buildings:
        st = required_heat(b, b.t_room_min, inst.horizon.dt, inst.constants)
        total += st.heat_input * b.room_count / 1e6
    doc["dhs"]["nodes"][0]["heat_schedule"] = [round(float(v), 4) for v in 1.03 * total]
    return doc


def main():
    OUT.mkdir(parents=True, exist_ok=True)
    for name, doc in (("pipe-example.json", pipe_example()), ("six-bus.json", with_source_schedule(six_bus()))):
        (OUT / name).write_text(json.dumps(doc, indent=1) + "\n")
        print("wrote", OUT / name)


if __name__ == "__main__":
    main()
