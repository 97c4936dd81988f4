"""Domain types for the integrated heat and electricity system, plus JSON I/O.

Instances are immutable once loaded. Time series are numpy arrays indexed by
period; pre-horizon histories are stored oldest first, so ``history[-1]`` is
period ``-1``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

__all__ = [
    "InstanceError",
    "Constants",
    "Horizon",
    "Pump",
    "PipeSchedule",
    "PipelineSpec",
    "FlowHistory",
    "ChpUnit",
    "ThermalUnit",
    "RenewablePlant",
    "Line",
    "GridModel",
    "DhsNode",
    "Wall",
    "BuildingSpec",
    "DispatchInstance",
    "ChpPolygonReport",
    "validate_chp_polygon",
    "required_history_depth",
    "load_instance",
    "instance_from_dict",
    "instance_to_dict",
    "save_instance",
    "bundled_instance_path",
]

ROLES = ("source", "load", "junction")


class InstanceError(ValueError):
    """Raised when an instance file fails to parse or validate.

    ``field`` names the offending entry using a dotted path such as
    ``dhs.pipelines[2].length``.
    """

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


@dataclass(frozen=True)
class Constants:
    rho: float = 1.0e3
    c: float = 4.2e3
    rho_air: float = 1.2
    c_air: float = 1.005e3


@dataclass(frozen=True)
class Horizon:
    periods: int
    dt: float
    start_index: int = 0

    @property
    def dt_hours(self) -> float:
        return self.dt / 3600.0

    def label(self, tau: int) -> int:
        return tau + self.start_index


@dataclass(frozen=True)
class Pump:
    head_min: float
    head_max: float
    efficiency: float
    bus: str | None = None


@dataclass(frozen=True)
class PipeSchedule:
    """Known in-horizon operation of a pipeline, used for simulation and as
    the nominal (steady-state) flow schedule in dispatch."""

    mass_flow: np.ndarray
    inlet_temp: np.ndarray | None = None
    pump_head: np.ndarray | None = None


@dataclass(frozen=True)
class PipelineSpec:
    id: str
    from_node: str
    to_node: str
    length: float
    area: float
    heat_transfer_coeff: float
    resistance: float
    m_min: float
    m_max: float
    ambient_temp: np.ndarray
    history_depth: int
    history_flow: np.ndarray
    history_temp: np.ndarray
    pump: Pump | None = None
    schedule: PipeSchedule | None = None

    def water_mass(self, rho: float) -> float:
        return rho * self.area * self.length


def required_history_depth(pipe: PipelineSpec, dt: float, rho: float) -> int:
    """Smallest window that can always hold a full pipe at minimum flow."""
    if pipe.m_min <= 0:
        raise ValueError("minimum flow is zero; history depth must be given explicitly")
    return math.ceil(pipe.water_mass(rho) / (pipe.m_min * dt) - 1e-12)


@dataclass
class FlowHistory:
    """Mass flow and inlet temperature of one pipeline over ``[-depth, periods)``."""

    mass_flow: np.ndarray
    inlet_temp: np.ndarray
    depth: int

    def __post_init__(self):
        self.mass_flow = np.asarray(self.mass_flow, dtype=float)
        self.inlet_temp = np.asarray(self.inlet_temp, dtype=float)
        if self.mass_flow.shape != self.inlet_temp.shape:
            raise ValueError("mass_flow and inlet_temp must have equal length")

    @classmethod
    def from_pipe(cls, pipe: PipelineSpec, mass_flow=None, inlet_temp=None) -> "FlowHistory":
        if mass_flow is None:
            if pipe.schedule is None:
                raise ValueError(f"pipeline {pipe.id} has no flow schedule")
            mass_flow = pipe.schedule.mass_flow
        if inlet_temp is None:
            if pipe.schedule is None or pipe.schedule.inlet_temp is None:
                inlet_temp = np.full(len(mass_flow), np.nan)
            else:
                inlet_temp = pipe.schedule.inlet_temp
        return cls(
            np.concatenate([pipe.history_flow, np.asarray(mass_flow, float)]),
            np.concatenate([pipe.history_temp, np.asarray(inlet_temp, float)]),
            pipe.history_depth,
        )

    @property
    def periods(self) -> int:
        return len(self.mass_flow) - self.depth

    def m(self, tau: int) -> float:
        return float(self.mass_flow[tau + self.depth])

    def window(self, tau: int, n: int) -> tuple[np.ndarray, np.ndarray]:
        """Return ``(m[tau-k], t[tau-k])`` for ``k = 0..n``."""
        hi = tau + self.depth
        lo = hi - n
        if lo < 0 or hi >= len(self.mass_flow):
            raise IndexError(f"period {tau} with depth {n} is outside the stored history")
        return self.mass_flow[lo : hi + 1][::-1], self.inlet_temp[lo : hi + 1][::-1]


@dataclass(frozen=True)
class ChpUnit:
    id: str
    bus: str
    dhs_node: str
    vertices: np.ndarray  # (NK, 2) of (P MW, Q MW)
    cost: tuple[float, float, float, float, float, float]
    ramp_p: tuple[float, float]  # (down, up) MW/h
    ramp_q: tuple[float, float]
    initial_p: float | None = None
    initial_q: float | None = None


@dataclass(frozen=True)
class ThermalUnit:
    id: str
    bus: str
    p_min: float
    p_max: float
    cost: tuple[float, float, float]
    ramp: tuple[float, float]  # (down, up) MW/h
    initial_p: float | None = None


@dataclass(frozen=True)
class RenewablePlant:
    id: str
    bus: str
    available: np.ndarray
    penalty: float


@dataclass(frozen=True)
class Line:
    id: str
    capacity: float
    shift_factors: np.ndarray  # aligned with GridModel.buses


@dataclass(frozen=True)
class GridModel:
    buses: tuple[str, ...]
    lines: tuple[Line, ...]
    demand: np.ndarray  # (buses, periods) MW
    reserve_up: float
    reserve_down: float

    def bus_index(self, bus: str) -> int:
        return self.buses.index(bus)


@dataclass(frozen=True)
class DhsNode:
    id: str
    role: str
    t_min: float
    t_max: float
    h_min: float
    h_max: float
    return_node: str | None = None
    heat_schedule: np.ndarray | None = None  # MW, used by network simulation only


@dataclass(frozen=True)
class Wall:
    area: float
    conv_coeff: float


@dataclass(frozen=True)
class BuildingSpec:
    """One building made of ``room_count`` identical, non-interacting rooms.

    The wall balance is written per unit wall area: response factors ``Y``,
    ``Z``, convection ``conv_coeff`` and radiation ``radiation`` all carry
    W/(m^2 K). The air balance weights each wall by its area.
    """

    id: str
    dhs_node: str
    room_count: int
    volume: float
    ventilation: np.ndarray  # m^3/s per period
    walls: tuple[Wall, ...]
    radiation: np.ndarray  # (Nw, Nw) symmetric
    Y: np.ndarray
    Z: np.ndarray
    internal_gain: np.ndarray  # W per period
    t_room_min: np.ndarray
    t_room_max: np.ndarray
    outdoor_temp: np.ndarray
    outdoor_history: np.ndarray  # (Ns,)
    wall_history: np.ndarray  # (Nw, Ns)
    room_history: np.ndarray  # (Ns,)

    @property
    def n_walls(self) -> int:
        return len(self.walls)

    @property
    def n_factors(self) -> int:
        return len(self.Y) - 1


@dataclass(frozen=True)
class DispatchInstance:
    horizon: Horizon
    grid: GridModel | None
    chp: tuple[ChpUnit, ...]
    thermal: tuple[ThermalUnit, ...]
    renewable: tuple[RenewablePlant, ...]
    nodes: tuple[DhsNode, ...]
    pipelines: tuple[PipelineSpec, ...]
    buildings: tuple[BuildingSpec, ...]
    constants: Constants = field(default_factory=Constants)
    name: str = ""

    def node(self, node_id: str) -> DhsNode:
        for n in self.nodes:
            if n.id == node_id:
                return n
        raise KeyError(node_id)

    def pipe(self, pipe_id: str) -> PipelineSpec:
        for p in self.pipelines:
            if p.id == pipe_id:
                return p
        raise KeyError(pipe_id)

    def node_index(self) -> dict[str, int]:
        return {n.id: i for i, n in enumerate(self.nodes)}

    def in_pipes(self, node_id: str) -> list[int]:
        return [b for b, p in enumerate(self.pipelines) if p.to_node == node_id]

    def out_pipes(self, node_id: str) -> list[int]:
        return [b for b, p in enumerate(self.pipelines) if p.from_node == node_id]

    def return_source(self, node_id: str) -> str | None:
        """Source node fed by ``node_id`` through a plant link, if any."""
        for n in self.nodes:
            if n.return_node == node_id:
                return n.id
        return None


# ---------------------------------------------------------------------------
# CHP polygon validation
# ---------------------------------------------------------------------------


@dataclass
class ChpPolygonReport:
    ok: bool
    violations: list[str]

    def __bool__(self) -> bool:
        return self.ok


def validate_chp_polygon(unit: ChpUnit) -> ChpPolygonReport:
    """Check that vertices form a strictly convex polygon and the cost is convex."""
    v = np.asarray(unit.vertices, dtype=float)
    if v.ndim != 2 or v.shape[1] != 2 or len(v) == 0:
        raise ValueError("vertices must be a non-empty (NK, 2) array")
    problems = []
    if len(v) < 3:
        problems.append(f"polygon needs at least 3 vertices, got {len(v)}")
    else:
        n = len(v)
        crosses = []
        for k in range(n):
            a, b, c = v[k], v[(k + 1) % n], v[(k + 2) % n]
            crosses.append((b[0] - a[0]) * (c[1] - b[1]) - (b[1] - a[1]) * (c[0] - b[0]))
        crosses = np.array(crosses)
        scale = max(1.0, float(np.abs(v).max()) ** 2)
        if np.any(np.abs(crosses) <= 1e-12 * scale):
            problems.append("degenerate polygon: collinear or repeated vertices")
        elif not (np.all(crosses > 0) or np.all(crosses < 0)):
            problems.append("polygon is not convex")
        else:
            # one-signed turns still allow a star polygon; require one full winding
            edges = np.roll(v, -1, axis=0) - v
            nxt = np.roll(edges, -1, axis=0)
            turn = np.arctan2(edges[:, 0] * nxt[:, 1] - edges[:, 1] * nxt[:, 0], np.sum(edges * nxt, axis=1))
            if abs(abs(turn.sum()) - 2 * np.pi) > 1e-6:
                problems.append("polygon is self-intersecting")
    a3, a4, a5 = unit.cost[3], unit.cost[4], unit.cost[5]
    if a3 < 0 or a4 < 0 or 4 * a3 * a4 < a5 * a5:
        problems.append(f"cost convexity violated: 4*a3*a4 = {4 * a3 * a4:g} < a5^2 = {a5 * a5:g}")
    return ChpPolygonReport(not problems, problems)


# ---------------------------------------------------------------------------
# JSON parsing
# ---------------------------------------------------------------------------


def _series(value, periods: int, where: str, default=None) -> np.ndarray:
    if value is None:
        if default is None:
            raise InstanceError(where, "missing")
        value = default
    if np.isscalar(value):
        return np.full(periods, float(value))
    arr = np.asarray(value, dtype=float)
    if arr.shape != (periods,):
        raise InstanceError(where, f"expected {periods} values, got {arr.size}")
    return arr


def _get(d: dict, key: str, where: str):
    try:
        return d[key]
    except (KeyError, TypeError):
        raise InstanceError(f"{where}.{key}" if where else key, "missing") from None


def _pair(value, where: str) -> tuple[float, float]:
    if np.isscalar(value):
        return float(value), float(value)
    if len(value) != 2:
        raise InstanceError(where, "expected [down, up]")
    return float(value[0]), float(value[1])


def _parse_pipe(d: dict, i: int, horizon: Horizon, const: Constants) -> PipelineSpec:
    where = f"dhs.pipelines[{i}]"
    T = horizon.periods
    m_lo, m_hi = (float(x) for x in _get(d, "mass_flow_bounds", where))
    pump = None
    if d.get("pump") is not None:
        pd_ = d["pump"]
        h_lo, h_hi = (float(x) for x in _get(pd_, "head_bounds", where + ".pump"))
        pump = Pump(h_lo, h_hi, float(_get(pd_, "efficiency", where + ".pump")), pd_.get("bus"))
    hist = _get(d, "history", where)
    h_flow = np.asarray(_get(hist, "mass_flow", where + ".history"), dtype=float)
    h_temp = np.asarray(_get(hist, "inlet_temp", where + ".history"), dtype=float)
    if h_flow.shape != h_temp.shape or h_flow.ndim != 1:
        raise InstanceError(where + ".history", "mass_flow and inlet_temp must be equal-length arrays")
    depth = d.get("history_depth")
    if depth is None:
        if m_lo <= 0:
            raise InstanceError(where + ".history_depth", "required when the minimum flow is zero")
        depth = math.ceil(const.rho * float(d["area"]) * float(d["length"]) / (m_lo * horizon.dt) - 1e-12)
    depth = int(depth)
    if len(h_flow) != depth:
        raise InstanceError(where + ".history", f"expected {depth} pre-horizon entries, got {len(h_flow)}")
    schedule = None
    if d.get("schedule") is not None:
        sd = d["schedule"]
        schedule = PipeSchedule(
            _series(_get(sd, "mass_flow", where + ".schedule"), T, where + ".schedule.mass_flow"),
            None if sd.get("inlet_temp") is None else _series(sd["inlet_temp"], T, where + ".schedule.inlet_temp"),
            None if sd.get("pump_head") is None else _series(sd["pump_head"], T, where + ".schedule.pump_head"),
        )
    return PipelineSpec(
        id=str(_get(d, "id", where)),
        from_node=str(_get(d, "from_node", where)),
        to_node=str(_get(d, "to_node", where)),
        length=float(_get(d, "length", where)),
        area=float(_get(d, "area", where)),
        heat_transfer_coeff=float(_get(d, "heat_transfer_coeff", where)),
        resistance=float(d.get("resistance", 0.0)),
        m_min=m_lo,
        m_max=m_hi,
        ambient_temp=_series(d.get("ambient_temp"), T, where + ".ambient_temp"),
        history_depth=depth,
        history_flow=h_flow,
        history_temp=h_temp,
        pump=pump,
        schedule=schedule,
    )


def _parse_building(d: dict, i: int, horizon: Horizon) -> BuildingSpec:
    where = f"dhs.buildings[{i}]"
    T = horizon.periods
    walls = tuple(
        Wall(float(_get(w, "area", f"{where}.walls[{k}]")), float(_get(w, "conv_coeff", f"{where}.walls[{k}]")))
        for k, w in enumerate(_get(d, "walls", where))
    )
    nw = len(walls)
    rad = d.get("radiation")
    rad = np.zeros((nw, nw)) if rad is None else np.asarray(rad, dtype=float)
    Y = np.asarray(_get(d, "response_Y", where), dtype=float)
    Z = np.asarray(_get(d, "response_Z", where), dtype=float)
    ns = len(Y) - 1
    t_lo = _series(_get(d, "room_temp_bounds", where)[0], T, where + ".room_temp_bounds[0]")
    t_hi = _series(_get(d, "room_temp_bounds", where)[1], T, where + ".room_temp_bounds[1]")
    t_out = _series(_get(d, "outdoor_temp", where), T, where + ".outdoor_temp")
    hist = d.get("history") or {}
    base = float(t_lo[0])
    out_hist = hist.get("outdoor_temp")
    out_hist = np.full(ns, t_out[0]) if out_hist is None else np.asarray(out_hist, dtype=float)
    wall_hist = hist.get("wall_temp")
    wall_hist = np.full((nw, ns), base) if wall_hist is None else np.asarray(wall_hist, dtype=float).reshape(nw, -1)
    room_hist = hist.get("room_temp")
    room_hist = np.full(ns, base) if room_hist is None else np.asarray(room_hist, dtype=float)
    return BuildingSpec(
        id=str(d.get("id", f"building{i}")),
        dhs_node=str(_get(d, "dhs_node", where)),
        room_count=int(_get(d, "room_count", where)),
        volume=float(_get(d, "volume", where)),
        ventilation=_series(_get(d, "ventilation", where), T, where + ".ventilation"),
        walls=walls,
        radiation=rad,
        Y=Y,
        Z=Z,
        internal_gain=_series(d.get("internal_gain", 0.0), T, where + ".internal_gain"),
        t_room_min=t_lo,
        t_room_max=t_hi,
        outdoor_temp=t_out,
        outdoor_history=out_hist,
        wall_history=wall_hist,
        room_history=room_hist,
    )


def instance_from_dict(data: dict[str, Any]) -> DispatchInstance:
    """Build and validate an instance from its JSON document."""
    hz = _get(data, "horizon", "")
    horizon = Horizon(int(_get(hz, "periods", "horizon")), float(_get(hz, "dt_seconds", "horizon")), int(hz.get("start_index", 0)))
    if horizon.periods < 1:
        raise InstanceError("horizon.periods", "must be at least 1")
    if not horizon.dt > 0:
        raise InstanceError("horizon.dt_seconds", "must be positive")
    T = horizon.periods
    const = Constants(**(data.get("constants") or {}))

    grid = None
    if data.get("grid") is not None:
        g = data["grid"]
        buses = tuple(str(b) for b in _get(g, "buses", "grid"))
        lines = []
        for i, ld in enumerate(g.get("lines", [])):
            sf = _get(ld, "shift_factors", f"grid.lines[{i}]")
            if isinstance(sf, dict):
                unknown = set(sf) - set(buses)
                if unknown:
                    raise InstanceError(f"grid.lines[{i}].shift_factors", f"unknown buses {sorted(unknown)}")
                sf = [float(sf.get(b, 0.0)) for b in buses]
            sf = np.asarray(sf, dtype=float)
            if sf.shape != (len(buses),):
                raise InstanceError(f"grid.lines[{i}].shift_factors", "must cover every bus")
            lines.append(Line(str(_get(ld, "id", f"grid.lines[{i}]")), float(_get(ld, "capacity_mw", f"grid.lines[{i}]")), sf))
        dem = _get(g, "demand", "grid")
        demand = np.zeros((len(buses), T))
        if isinstance(dem, dict):
            for b, series in dem.items():
                if b not in buses:
                    raise InstanceError("grid.demand", f"unknown bus {b}")
                demand[buses.index(b)] = _series(series, T, f"grid.demand.{b}")
        else:
            demand = np.asarray(dem, dtype=float)
            if demand.shape != (len(buses), T):
                raise InstanceError("grid.demand", "expected one series per bus")
        res = g.get("reserve") or {}
        grid = GridModel(buses, tuple(lines), demand, float(res.get("up_mw", 0.0)), float(res.get("down_mw", 0.0)))

    units = data.get("units") or {}
    chp = []
    for i, u in enumerate(units.get("chp", [])):
        where = f"units.chp[{i}]"
        cost = tuple(float(x) for x in _get(u, "cost", where))
        if len(cost) != 6:
            raise InstanceError(where + ".cost", "expected a0..a5")
        chp.append(
            ChpUnit(
                id=str(u.get("id", f"chp{i}")),
                bus=str(_get(u, "bus", where)),
                dhs_node=str(_get(u, "dhs_node", where)),
                vertices=np.asarray(_get(u, "vertices", where), dtype=float),
                cost=cost,
                ramp_p=_pair(u.get("ramp_p", [math.inf, math.inf]), where + ".ramp_p"),
                ramp_q=_pair(u.get("ramp_q", [math.inf, math.inf]), where + ".ramp_q"),
                initial_p=u.get("initial_p"),
                initial_q=u.get("initial_q"),
            )
        )
    thermal = []
    for i, u in enumerate(units.get("thermal", [])):
        where = f"units.thermal[{i}]"
        cost = tuple(float(x) for x in _get(u, "cost", where))
        if len(cost) != 3:
            raise InstanceError(where + ".cost", "expected d0..d2")
        lo, hi = (float(x) for x in _get(u, "p_bounds", where))
        thermal.append(
            ThermalUnit(
                str(u.get("id", f"g{i}")), str(_get(u, "bus", where)), lo, hi, cost,
                _pair(u.get("ramp", [math.inf, math.inf]), where + ".ramp"), u.get("initial_p"),
            )
        )
    renewable = []
    for i, u in enumerate(units.get("renewable", [])):
        where = f"units.renewable[{i}]"
        renewable.append(
            RenewablePlant(
                str(u.get("id", f"w{i}")), str(_get(u, "bus", where)),
                _series(_get(u, "available", where), T, where + ".available"), float(u.get("penalty", 0.0)),
            )
        )

    dhs = data.get("dhs") or {}
    nodes = []
    for i, n in enumerate(dhs.get("nodes", [])):
        where = f"dhs.nodes[{i}]"
        tb = _get(n, "temp_bounds", where)
        hb = n.get("pressure_bounds", [-math.inf, math.inf])
        hs = n.get("heat_schedule")
        nodes.append(
            DhsNode(
                str(_get(n, "id", where)), str(n.get("role", "junction")), float(tb[0]), float(tb[1]),
                float(hb[0]), float(hb[1]), n.get("return_node"),
                None if hs is None else _series(hs, T, where + ".heat_schedule"),
            )
        )
    pipes = [_parse_pipe(p, i, horizon, const) for i, p in enumerate(dhs.get("pipelines", []))]
    buildings = [_parse_building(b, i, horizon) for i, b in enumerate(dhs.get("buildings", []))]

    inst = DispatchInstance(
        horizon, grid, tuple(chp), tuple(thermal), tuple(renewable), tuple(nodes), tuple(pipes),
        tuple(buildings), const, str(data.get("name", "")),
    )
    validate_instance(inst)
    return inst


def validate_instance(inst: DispatchInstance) -> None:
    T = inst.horizon.periods
    dt = inst.horizon.dt
    const = inst.constants
    if const.rho <= 0 or const.c <= 0:
        raise InstanceError("constants", "densities and heat capacities must be positive")

    node_ids = [n.id for n in inst.nodes]
    if len(set(node_ids)) != len(node_ids):
        raise InstanceError("dhs.nodes", "duplicate node id")
    for i, n in enumerate(inst.nodes):
        where = f"dhs.nodes[{i}]"
        if n.role not in ROLES:
            raise InstanceError(where + ".role", f"must be one of {ROLES}")
        if n.t_min > n.t_max:
            raise InstanceError(where + ".temp_bounds", "lower bound exceeds upper bound")
        if n.h_min > n.h_max:
            raise InstanceError(where + ".pressure_bounds", "lower bound exceeds upper bound")
        if n.return_node is not None:
            if n.role != "source":
                raise InstanceError(where + ".return_node", "only source nodes take a return node")
            if n.return_node not in node_ids or n.return_node == n.id:
                raise InstanceError(where + ".return_node", f"unknown node {n.return_node}")

    pipe_ids = [p.id for p in inst.pipelines]
    if len(set(pipe_ids)) != len(pipe_ids):
        raise InstanceError("dhs.pipelines", "duplicate pipeline id")
    for i, p in enumerate(inst.pipelines):
        where = f"dhs.pipelines[{i}]"
        for end in ("from_node", "to_node"):
            if getattr(p, end) not in node_ids:
                raise InstanceError(f"{where}.{end}", f"unknown node {getattr(p, end)}")
        if p.from_node == p.to_node:
            raise InstanceError(where, "pipeline starts and ends at the same node")
        if not p.length > 0:
            raise InstanceError(where + ".length", "must be positive")
        if not p.area > 0:
            raise InstanceError(where + ".area", "must be positive")
        if p.heat_transfer_coeff < 0:
            raise InstanceError(where + ".heat_transfer_coeff", "must be non-negative")
        if not 0 <= p.m_min <= p.m_max:
            raise InstanceError(where + ".mass_flow_bounds", "need 0 <= min <= max")
        if p.m_min > 0:
            need = required_history_depth(p, dt, const.rho)
            if p.history_depth < need:
                raise InstanceError(where + ".history_depth", f"must be at least {need} for the minimum flow")
        if p.history_depth < 1:
            raise InstanceError(where + ".history_depth", "must be at least 1")
        if np.any(~np.isfinite(p.history_flow)) or np.any(~np.isfinite(p.history_temp)):
            raise InstanceError(where + ".history", "pre-horizon entries must be fully populated")
        if np.any(p.history_flow <= 0):
            raise InstanceError(where + ".history.mass_flow", "flows must be positive")
        if p.pump is not None:
            if not 0 < p.pump.efficiency <= 1:
                raise InstanceError(where + ".pump.efficiency", "must lie in (0, 1]")
            if p.pump.head_min > p.pump.head_max:
                raise InstanceError(where + ".pump.head_bounds", "lower bound exceeds upper bound")
        if p.schedule is not None:
            if np.any(p.schedule.mass_flow <= 0):
                raise InstanceError(where + ".schedule.mass_flow", "flows must be positive")

    _check_graph(inst)

    grid = inst.grid
    units = list(inst.chp) + list(inst.thermal) + list(inst.renewable)
    if units and grid is None:
        raise InstanceError("grid", "required when units are present")
    for kind, group in (("chp", inst.chp), ("thermal", inst.thermal), ("renewable", inst.renewable)):
        for i, u in enumerate(group):
            if u.bus not in grid.buses:
                raise InstanceError(f"units.{kind}[{i}].bus", f"unknown bus {u.bus}")
    for i, u in enumerate(inst.chp):
        where = f"units.chp[{i}]"
        if u.dhs_node not in node_ids:
            raise InstanceError(where + ".dhs_node", f"unknown node {u.dhs_node}")
        if inst.node(u.dhs_node).role != "source":
            raise InstanceError(where + ".dhs_node", "CHP units must sit at a source node")
        report = validate_chp_polygon(u)
        if not report:
            raise InstanceError(where, "; ".join(report.violations))
    for i, u in enumerate(inst.thermal):
        if u.p_min > u.p_max:
            raise InstanceError(f"units.thermal[{i}].p_bounds", "lower bound exceeds upper bound")
        if u.cost[2] < 0:
            raise InstanceError(f"units.thermal[{i}].cost", "d2 must be non-negative")
    for i, u in enumerate(inst.renewable):
        if np.any(u.available < 0):
            raise InstanceError(f"units.renewable[{i}].available", "must be non-negative")
        if u.penalty < 0:
            raise InstanceError(f"units.renewable[{i}].penalty", "must be non-negative")
    if grid is not None:
        if grid.demand.shape != (len(grid.buses), T):
            raise InstanceError("grid.demand", "shape mismatch")
    for i, p in enumerate(inst.pipelines):
        if p.pump is not None and p.pump.bus is not None and (grid is None or p.pump.bus not in grid.buses):
            raise InstanceError(f"dhs.pipelines[{i}].pump.bus", f"unknown bus {p.pump.bus}")

    for i, b in enumerate(inst.buildings):
        where = f"dhs.buildings[{i}]"
        if b.dhs_node not in node_ids:
            raise InstanceError(where + ".dhs_node", f"unknown node {b.dhs_node}")
        if inst.node(b.dhs_node).role != "load":
            raise InstanceError(where + ".dhs_node", "buildings must sit at a load node")
        if b.room_count < 1:
            raise InstanceError(where + ".room_count", "must be at least 1")
        if not b.volume > 0:
            raise InstanceError(where + ".volume", "must be positive")
        if not b.walls:
            raise InstanceError(where + ".walls", "at least one wall is required")
        if any(not w.area > 0 for w in b.walls):
            raise InstanceError(where + ".walls", "wall areas must be positive")
        nw = b.n_walls
        if b.radiation.shape != (nw, nw) or not np.allclose(b.radiation, b.radiation.T):
            raise InstanceError(where + ".radiation", "must be a symmetric (walls x walls) matrix")
        if b.Y.shape != b.Z.shape or b.n_factors < 1:
            raise InstanceError(where + ".response_Y", "Y and Z need equal length of at least 2")
        ns = b.n_factors
        if b.outdoor_history.shape != (ns,):
            raise InstanceError(where + ".history.outdoor_temp", f"expected {ns} values")
        if b.wall_history.shape != (nw, ns):
            raise InstanceError(where + ".history.wall_temp", f"expected {nw} x {ns} values")
        if b.room_history.shape != (ns,):
            raise InstanceError(where + ".history.room_temp", f"expected {ns} values")
        if np.any(b.t_room_min > b.t_room_max):
            raise InstanceError(where + ".room_temp_bounds", "lower bound exceeds upper bound")


def _check_graph(inst: DispatchInstance) -> None:
    """Reject directed cycles and disconnected pieces of the pipe graph."""
    ids = [n.id for n in inst.nodes]
    if not ids:
        return
    succ = {n: [] for n in ids}
    for p in inst.pipelines:
        succ[p.from_node].append(p.to_node)
    state = dict.fromkeys(ids, 0)
    for root in ids:
        if state[root]:
            continue
        stack = [(root, iter(succ[root]))]
        state[root] = 1
        while stack:
            node, it = stack[-1]
            nxt = next(it, None)
            if nxt is None:
                state[node] = 2
                stack.pop()
            elif state[nxt] == 1:
                raise InstanceError("dhs.pipelines", f"flow graph has a directed cycle through node {nxt}")
            elif state[nxt] == 0:
                state[nxt] = 1
                stack.append((nxt, iter(succ[nxt])))

    adj = {n: set() for n in ids}
    for p in inst.pipelines:
        adj[p.from_node].add(p.to_node)
        adj[p.to_node].add(p.from_node)
    for n in inst.nodes:
        if n.return_node is not None:
            adj[n.id].add(n.return_node)
            adj[n.return_node].add(n.id)
    seen = {ids[0]}
    todo = [ids[0]]
    while todo:
        for nb in adj[todo.pop()]:
            if nb not in seen:
                seen.add(nb)
                todo.append(nb)
    if len(seen) != len(ids):
        raise InstanceError("dhs.nodes", f"network is not connected: {sorted(set(ids) - seen)} unreachable")
    for n in inst.nodes:
        if n.return_node is not None and any(p.from_node == n.return_node for p in inst.pipelines):
            raise InstanceError("dhs.nodes", f"return node {n.return_node} must not feed pipelines")


def load_instance(path) -> DispatchInstance:
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise InstanceError("<file>", f"cannot parse {path}: {exc}") from exc
    return instance_from_dict(data)


def _list(a):
    if a is None:
        return None
    return np.asarray(a).tolist()


def instance_to_dict(inst: DispatchInstance) -> dict[str, Any]:
    out: dict[str, Any] = {
        "name": inst.name,
        "horizon": {"periods": inst.horizon.periods, "dt_seconds": inst.horizon.dt, "start_index": inst.horizon.start_index},
        "constants": {
            "rho": inst.constants.rho, "c": inst.constants.c,
            "rho_air": inst.constants.rho_air, "c_air": inst.constants.c_air,
        },
    }
    if inst.grid is not None:
        g = inst.grid
        out["grid"] = {
            "buses": list(g.buses),
            "lines": [{"id": ln.id, "capacity_mw": ln.capacity, "shift_factors": _list(ln.shift_factors)} for ln in g.lines],
            "demand": _list(g.demand),
            "reserve": {"up_mw": g.reserve_up, "down_mw": g.reserve_down},
        }
    out["units"] = {
        "chp": [
            {
                "id": u.id, "bus": u.bus, "dhs_node": u.dhs_node, "vertices": _list(u.vertices),
                "cost": list(u.cost), "ramp_p": list(u.ramp_p), "ramp_q": list(u.ramp_q),
                "initial_p": u.initial_p, "initial_q": u.initial_q,
            }
            for u in inst.chp
        ],
        "thermal": [
            {
                "id": u.id, "bus": u.bus, "p_bounds": [u.p_min, u.p_max], "cost": list(u.cost),
                "ramp": list(u.ramp), "initial_p": u.initial_p,
            }
            for u in inst.thermal
        ],
        "renewable": [
            {"id": u.id, "bus": u.bus, "available": _list(u.available), "penalty": u.penalty} for u in inst.renewable
        ],
    }
    pipes = []
    for p in inst.pipelines:
        d = {
            "id": p.id, "from_node": p.from_node, "to_node": p.to_node, "length": p.length, "area": p.area,
            "heat_transfer_coeff": p.heat_transfer_coeff, "resistance": p.resistance,
            "mass_flow_bounds": [p.m_min, p.m_max], "ambient_temp": _list(p.ambient_temp),
            "history_depth": p.history_depth,
            "history": {"mass_flow": _list(p.history_flow), "inlet_temp": _list(p.history_temp)},
        }
        if p.pump is not None:
            d["pump"] = {"head_bounds": [p.pump.head_min, p.pump.head_max], "efficiency": p.pump.efficiency, "bus": p.pump.bus}
        if p.schedule is not None:
            d["schedule"] = {
                "mass_flow": _list(p.schedule.mass_flow),
                "inlet_temp": _list(p.schedule.inlet_temp),
                "pump_head": _list(p.schedule.pump_head),
            }
        pipes.append(d)
    out["dhs"] = {
        "nodes": [
            {
                "id": n.id, "role": n.role, "temp_bounds": [n.t_min, n.t_max], "pressure_bounds": [n.h_min, n.h_max],
                "return_node": n.return_node, "heat_schedule": _list(n.heat_schedule),
            }
            for n in inst.nodes
        ],
        "pipelines": pipes,
        "buildings": [
            {
                "id": b.id, "dhs_node": b.dhs_node, "room_count": b.room_count, "volume": b.volume,
                "ventilation": _list(b.ventilation),
                "walls": [{"area": w.area, "conv_coeff": w.conv_coeff} for w in b.walls],
                "radiation": _list(b.radiation), "response_Y": _list(b.Y), "response_Z": _list(b.Z),
                "internal_gain": _list(b.internal_gain),
                "room_temp_bounds": [_list(b.t_room_min), _list(b.t_room_max)],
                "outdoor_temp": _list(b.outdoor_temp),
                "history": {
                    "outdoor_temp": _list(b.outdoor_history), "wall_temp": _list(b.wall_history),
                    "room_temp": _list(b.room_history),
                },
            }
            for b in inst.buildings
        ],
    }
    return out


def save_instance(inst: DispatchInstance, path) -> None:
    Path(path).write_text(json.dumps(instance_to_dict(inst), indent=1), encoding="utf-8")


def bundled_instance_path(name: str) -> Path:
    """Path of an instance shipped with the package (``pipe-example.json``, ``six-bus.json``)."""
    p = Path(__file__).with_name("data") / name
    if not p.suffix:
        p = p.with_suffix(".json")
    if not p.exists():
        raise FileNotFoundError(name)
    return p
