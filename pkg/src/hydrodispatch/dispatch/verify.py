"""Independent feasibility check of a dispatch solution.

Works from the raw instance data and the named solution values only; none of
the model's row assembly is reused. Pipeline outlets are recomputed from
scratch with the fill mapping and the outlet formula.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..building import BuildingState, building_residuals
from ..hydraulics import HydraulicState, continuity_residual, mixing_residual, pressure_residual
from ..network import DispatchInstance, FlowHistory
from ..pipeline import fill_weights, steady_outlet, wmm_outlet
from .solution import DispatchSolution

__all__ = ["FeasibilityReport", "check_feasibility"]


@dataclass
class FeasibilityReport:
    """Largest violation per constraint family.

    Equalities report ``|lhs - rhs|`` and inequalities the amount by which
    they are exceeded, both divided by ``max(1, magnitude of the terms)``.
    """

    tol: float
    residuals: dict[str, float] = field(default_factory=dict)

    def record(self, family: str, value) -> None:
        v = float(np.max(value)) if np.size(value) else 0.0
        self.residuals[family] = max(self.residuals.get(family, 0.0), v)

    @property
    def violations(self) -> dict[str, float]:
        return {k: v for k, v in self.residuals.items() if not v <= self.tol}

    @property
    def ok(self) -> bool:
        return not self.violations

    @property
    def worst(self) -> float:
        return max(self.residuals.values(), default=0.0)

    def __str__(self) -> str:
        lines = [f"{k:<18} {v:.3e}{'  VIOLATED' if not v <= self.tol else ''}" for k, v in sorted(self.residuals.items())]
        return "\n".join(lines)


def _rel(diff, *terms):
    diff = np.asarray(diff, dtype=float)
    mag = np.ones_like(diff)
    for t in terms:
        mag = np.maximum(mag, np.abs(np.asarray(t, dtype=float)))
    return np.abs(diff) / mag


def _over(value, limit):
    """Relative excess of ``value`` above ``limit`` (zero when satisfied)."""
    value = np.asarray(value, dtype=float)
    limit = np.asarray(limit, dtype=float)
    return np.maximum(value - limit, 0.0) / np.maximum(1.0, np.maximum(np.abs(value), np.abs(limit)))


def check_feasibility(inst: DispatchInstance, sol: DispatchSolution, tol: float = 1e-6) -> FeasibilityReport:
    """Re-evaluate every constraint family of the dispatch model for ``sol``."""
    rep = FeasibilityReport(tol)
    v = sol.values
    T = inst.horizon.periods
    dt_h = inst.horizon.dt_hours
    steady = sol.method == "steady"

    p_chp = np.asarray(v["p_chp"]).reshape(len(inst.chp), T)
    q_chp = np.asarray(v["q_chp"]).reshape(len(inst.chp), T)
    for i, u in enumerate(inst.chp):
        V = np.asarray(u.vertices, dtype=float)
        z = np.asarray(v["zeta"][i])
        rep.record("chp_polygon", _rel(p_chp[i] - V[:, 0] @ z, p_chp[i]))
        rep.record("chp_polygon", _rel(q_chp[i] - V[:, 1] @ z, q_chp[i]))
        rep.record("chp_polygon", np.abs(z.sum(axis=0) - 1.0))
        rep.record("chp_polygon", np.maximum(-z, 0.0))
        for series, (down, up), init in ((p_chp[i], u.ramp_p, u.initial_p), (q_chp[i], u.ramp_q, u.initial_q)):
            _ramps(rep, "chp_ramp", series, down * dt_h, up * dt_h, init)

    p_th = np.asarray(v["p_th"]).reshape(len(inst.thermal), T)
    ru = np.asarray(v["ru"]).reshape(len(inst.thermal), T)
    rd = np.asarray(v["rd"]).reshape(len(inst.thermal), T)
    for i, u in enumerate(inst.thermal):
        rep.record("thermal_limits", _over(p_th[i], u.p_max))
        rep.record("thermal_limits", _over(u.p_min, p_th[i]))
        rep.record("reserve", _over(p_th[i] + ru[i], u.p_max))
        rep.record("reserve", _over(u.p_min, p_th[i] - rd[i]))
        rep.record("reserve", _over(ru[i], u.ramp[1] * dt_h))
        rep.record("reserve", _over(rd[i], u.ramp[0] * dt_h))
        rep.record("reserve", np.maximum(-np.minimum(ru[i], rd[i]), 0.0))
        _ramps(rep, "thermal_ramp", p_th[i], u.ramp[0] * dt_h, u.ramp[1] * dt_h, u.initial_p)
    if inst.thermal and inst.grid is not None:
        rep.record("reserve", _over(inst.grid.reserve_up, ru.sum(axis=0)))
        rep.record("reserve", _over(inst.grid.reserve_down, rd.sum(axis=0)))

    p_re = np.asarray(v["p_re"]).reshape(len(inst.renewable), T)
    for i, u in enumerate(inst.renewable):
        rep.record("renewable", _over(p_re[i], u.available))
        rep.record("renewable", np.maximum(-p_re[i], 0.0))

    if inst.grid is not None:
        g = inst.grid
        inj = np.zeros((len(g.buses), T))
        for i, u in enumerate(inst.chp):
            inj[g.bus_index(u.bus)] += p_chp[i]
        for i, u in enumerate(inst.thermal):
            inj[g.bus_index(u.bus)] += p_th[i]
        for i, u in enumerate(inst.renewable):
            inj[g.bus_index(u.bus)] += p_re[i]
        if sol.flags.get("pump_load"):
            pp = np.asarray(v["p_pump"])
            for b, p in enumerate(inst.pipelines):
                if p.pump is not None:
                    inj[g.bus_index(p.pump.bus)] -= pp[b]
        net = inj - g.demand
        rep.record("power_balance", _rel(net.sum(axis=0), g.demand.sum(axis=0)))
        for line in g.lines:
            flow = line.shift_factors @ net
            rep.record("line_limits", _over(np.abs(flow), line.capacity))

    _check_dhs(inst, sol, rep, steady)
    return rep


def _ramps(rep, family, series, down, up, init):
    prev = np.concatenate([[init], series[:-1]]) if init is not None else series[:-1]
    cur = series if init is not None else series[1:]
    if np.isfinite(up):
        rep.record(family, _over(cur - prev, up))
    if np.isfinite(down):
        rep.record(family, _over(prev - cur, down))


def _check_dhs(inst: DispatchInstance, sol: DispatchSolution, rep: FeasibilityReport, steady: bool) -> None:
    v = sol.values
    T = inst.horizon.periods
    dt = inst.horizon.dt
    const = inst.constants
    idx = inst.node_index()
    m = np.asarray(sol.m, dtype=float)
    t_n = np.asarray(v["t_n"])
    t_e = np.asarray(v["t_e"])
    h_n = np.asarray(v["h_n"])
    heads = np.asarray(v["h_pump"])

    for b, p in enumerate(inst.pipelines):
        rep.record("mass_flow_bounds", _over(m[b], p.m_max))
        rep.record("mass_flow_bounds", _over(p.m_min, m[b]))
        if p.pump is not None:
            rep.record("pump_head", _over(heads[b], p.pump.head_max))
            rep.record("pump_head", _over(p.pump.head_min, heads[b]))
        else:
            rep.record("pump_head", np.abs(heads[b]))
    for j, nd in enumerate(inst.nodes):
        rep.record("node_bounds", _over(t_n[j], nd.t_max))
        rep.record("node_bounds", _over(nd.t_min, t_n[j]))
        rep.record("node_bounds", _over(h_n[j], nd.h_max))
        rep.record("node_bounds", _over(nd.h_min, h_n[j]))

    state = HydraulicState(h_n, heads, m)
    for tau in range(T):
        rep.record("continuity", _rel(continuity_residual(inst, m, tau), m[:, tau].max()))
        res = pressure_residual(inst, state, tau)
        rep.record("pressure", np.abs(res) / np.maximum(1.0, np.abs(h_n[:, tau]).max()))

    # node heat: CHP injection minus building draw, MW
    q = np.zeros((len(inst.nodes), T))
    for i, u in enumerate(inst.chp):
        q[idx[u.dhs_node]] += np.asarray(v["q_chp"])[i]
    for k, bs in enumerate(inst.buildings):
        q[idx[bs.dhs_node]] -= bs.room_count * np.asarray(v["heat_input"][k]) / 1e6
    rep.record("node_heat", _rel(np.asarray(v["q_n"]) - q, q))

    for tau in range(T):
        for nd in inst.nodes:
            j = idx[nd.id]
            ins, outs = inst.in_pipes(nd.id), inst.out_pipes(nd.id)
            in_f = [m[b, tau] for b in ins]
            in_t = [t_e[b, tau] for b in ins]
            if nd.return_node is not None:
                r = nd.return_node
                in_f.append(sum(m[b, tau] for b in inst.in_pipes(r)))
                in_t.append(t_n[idx[r], tau])
            out_f = [m[b, tau] for b in (outs if outs else ins)]
            res = mixing_residual(in_f, in_t, out_f, t_n[j, tau], q[j, tau] * 1e6, const.c)
            scale = const.c * max(sum(out_f), 1e-12) * max(abs(t_n[j, tau]), 1.0)
            rep.record("mixing", abs(res) / scale)

    for b, p in enumerate(inst.pipelines):
        t_in = t_n[idx[p.from_node]]
        if steady:
            for tau in range(T):
                ref = steady_outlet(p, m[b, tau], t_in[tau], p.ambient_temp[tau], const)
                rep.record("pipe_outlet", _rel(t_e[b, tau] - ref, ref))
            continue
        hist = FlowHistory.from_pipe(p, m[b], t_in)
        for tau in range(T):
            out = wmm_outlet(p, hist, tau, dt, const)
            rep.record("pipe_outlet", _rel(t_e[b, tau] - out.t_out, out.t_out))
            if sol.weights:
                w = fill_weights(p, hist, tau, dt, const)
                given = sol.weights[b][tau]
                rep.record("weights", np.abs(given.alpha - w.alpha).max(initial=0.0))
                rep.record("weights", np.abs(given.beta - w.beta).max(initial=0.0))

    for k, bs in enumerate(inst.buildings):
        st = BuildingState(np.asarray(v["t_wall"][k]), np.asarray(v["t_room"][k]), np.asarray(v["heat_input"][k]))
        wall, air = building_residuals(bs, st, dt, const)
        rep.record("building", np.abs(wall))
        rep.record("building", np.abs(air))
        rep.record("room_band", _over(st.t_room, bs.t_room_max))
        rep.record("room_band", _over(bs.t_room_min, st.t_room))
        rep.record("room_band", np.maximum(-st.heat_input, 0.0) / 1e3)
