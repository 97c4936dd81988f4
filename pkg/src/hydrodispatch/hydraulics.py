"""Pressure, pump, continuity and temperature-mixing relations of the network.

Pressures are in Pa and pipe resistances in Pa/(kg/s)^2. Node heat ``q_n``
is positive for injection and negative for extraction; the residual helpers
work in W while network propagation takes MW schedules like the instance.

A source node may name a ``return_node``. The plant between them is not a
pipeline: its mass balance is ``sum out(source) = sum in(return)`` and the
water it receives is at the return node's mixed temperature.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

from .network import Constants, DispatchInstance, FlowHistory
from .pipeline import WaterColumnWeights, fill_vector, fill_weights

__all__ = [
    "HydraulicState",
    "pressure_residual",
    "pump_power",
    "mixing_residual",
    "continuity_residual",
    "solve_pressures",
    "NetworkResult",
    "propagate_network",
    "network_heat_balance",
]


@dataclass
class HydraulicState:
    node_pressure: np.ndarray  # (nodes, T) Pa
    pump_head: np.ndarray  # (pipes, T) Pa, zero where no pump
    mass_flow: np.ndarray  # (pipes, T) kg/s


def pressure_residual(inst: DispatchInstance, state: HydraulicState, tau: int) -> np.ndarray:
    """``(h_from - h_to) - k m^2 + h_pump`` for every pipeline."""
    idx = inst.node_index()
    out = np.empty(len(inst.pipelines))
    for b, p in enumerate(inst.pipelines):
        dh = state.node_pressure[idx[p.from_node], tau] - state.node_pressure[idx[p.to_node], tau]
        out[b] = dh - p.resistance * state.mass_flow[b, tau] ** 2 + state.pump_head[b, tau]
    return out


def pump_power(m, head, eta: float, rho: float = 1.0e3):
    """Electric power in MW of a pump lifting ``m`` kg/s by ``head`` Pa."""
    if not 0.0 < eta <= 1.0:
        raise ValueError(f"pump efficiency must lie in (0, 1], got {eta}")
    return np.asarray(m) * np.asarray(head) / (rho * eta) / 1.0e6


def mixing_residual(
    in_flows, in_temps, out_flows, t_n: float, q_n: float, c: float = Constants.c
) -> float:
    """Heat balance of one node in W: ``c*sum(m_out)*t_n - c*sum(m_in*t_e) - q_n``."""
    in_flows = np.asarray(in_flows, dtype=float)
    in_temps = np.asarray(in_temps, dtype=float)
    return float(c * np.sum(out_flows) * t_n - c * np.dot(in_flows, in_temps) - q_n)


def _node_masses(inst: DispatchInstance, flows: np.ndarray, tau: int):
    """Per-node (inflow, outflow) masses including plant links."""
    idx = inst.node_index()
    m_in = np.zeros(len(inst.nodes))
    m_out = np.zeros(len(inst.nodes))
    for b, p in enumerate(inst.pipelines):
        m_out[idx[p.from_node]] += flows[b, tau]
        m_in[idx[p.to_node]] += flows[b, tau]
    return m_in, m_out


def continuity_residual(inst: DispatchInstance, flows: np.ndarray, tau: int) -> np.ndarray:
    """Mass imbalance per node (kg/s) for nodes where continuity applies.

    Junction-type nodes with both inflow and outflow pipes must balance; a
    source with a return node must send out what its return node receives.
    Nodes where the network starts or ends without a plant link are free.
    """
    idx = inst.node_index()
    m_in, m_out = _node_masses(inst, flows, tau)
    res = np.zeros(len(inst.nodes))
    for n in inst.nodes:
        i = idx[n.id]
        if n.return_node is not None:
            res[i] = m_out[i] - m_in[idx[n.return_node]]
        elif inst.in_pipes(n.id) and inst.out_pipes(n.id):
            res[i] = m_in[i] - m_out[i]
    return res


def solve_pressures(
    inst: DispatchInstance, flows_tau: np.ndarray, pump_tau: np.ndarray, reference: str, value: float
) -> np.ndarray:
    """Node pressures from one reference value by walking the pipe graph.

    Pipes that close an undirected cycle are not used; their residual tells
    whether the given pump heads are consistent.
    """
    idx = inst.node_index()
    h = np.full(len(inst.nodes), np.nan)
    h[idx[reference]] = value
    adj: dict[str, list[tuple[int, bool]]] = {n.id: [] for n in inst.nodes}
    for b, p in enumerate(inst.pipelines):
        adj[p.from_node].append((b, True))
        adj[p.to_node].append((b, False))
    queue = deque([reference])
    while queue:
        nid = queue.popleft()
        for b, forward in adj[nid]:
            p = inst.pipelines[b]
            drop = p.resistance * flows_tau[b] ** 2 - pump_tau[b]
            other = p.to_node if forward else p.from_node
            if np.isnan(h[idx[other]]):
                h[idx[other]] = h[idx[nid]] - drop if forward else h[idx[nid]] + drop
                queue.append(other)
    return h


@dataclass
class NetworkResult:
    node_temp: np.ndarray  # (nodes, T)
    inlet_temp: np.ndarray  # (pipes, T), equals the from-node temperature
    lossless_temp: np.ndarray  # (pipes, T)
    outlet_temp: np.ndarray  # (pipes, T)
    weights: list[list[WaterColumnWeights]]  # [pipe][tau]
    histories: list[FlowHistory]


def propagate_network(
    inst: DispatchInstance, flows: np.ndarray | None = None, heat: np.ndarray | None = None
) -> NetworkResult:
    """Temperature field of the network for known flows and node heat.

    ``flows`` is (pipes, T) in kg/s and defaults to each pipeline's schedule;
    ``heat`` is (nodes, T) in MW and defaults to the node heat schedules
    (zero where absent). Water entering a pipe in the current period can
    reach its outlet in the same period, and plant links close loops, so each
    period is solved as one linear system in the node temperatures.
    """
    T = inst.horizon.periods
    dt = inst.horizon.dt
    const = inst.constants
    c = const.c
    nN, nB = len(inst.nodes), len(inst.pipelines)
    idx = inst.node_index()
    if flows is None:
        flows = np.array([p.schedule.mass_flow if p.schedule is not None else np.full(T, np.nan) for p in inst.pipelines])
    flows = np.asarray(flows, dtype=float).reshape(nB, T)
    if np.isnan(flows).any():
        raise ValueError("mass flows are missing for some pipelines")
    if heat is None:
        heat = np.array([n.heat_schedule if n.heat_schedule is not None else np.zeros(T) for n in inst.nodes])
    heat = np.asarray(heat, dtype=float).reshape(nN, T)
    for tau in range(T):
        bad = np.abs(continuity_residual(inst, flows, tau)) > 1e-9 * max(1.0, np.abs(flows[:, tau]).max())
        if bad.any():
            raise ValueError(f"mass continuity fails at period {tau} for nodes {[inst.nodes[i].id for i in np.flatnonzero(bad)]}")

    hist = [FlowHistory.from_pipe(p, flows[b], np.full(T, np.nan)) for b, p in enumerate(inst.pipelines)]
    node_t = np.zeros((nN, T))
    lossless = np.zeros((nB, T))
    outlet = np.zeros((nB, T))
    weights: list[list[WaterColumnWeights]] = [[] for _ in range(nB)]
    src_of = {n.return_node: n.id for n in inst.nodes if n.return_node is not None}

    for tau in range(T):
        # outlet of pipe b = a_b + g_b * t_n(from) with a, g from the weights
        a = np.zeros(nB)
        g = np.zeros(nB)
        for b, p in enumerate(inst.pipelines):
            w = fill_weights(p, hist[b], tau, dt, const)
            weights[b].append(w)
            m_win, t_win = hist[b].window(tau, p.history_depth)
            ew = w.exit_weights * m_win / m_win[0]
            known = float(np.dot(ew[1:], t_win[1:]))
            F = np.exp(-p.heat_transfer_coeff * dt / (2 * p.area * const.rho * const.c) * (w.alpha.sum() + w.beta[1:].sum()))
            t_am = p.ambient_temp[tau]
            # lossless = known + ew0 * t_from; outlet = t_am + F (lossless - t_am)
            a[b] = t_am * (1 - F) + F * known
            g[b] = F * ew[0]
            lossless[b, tau] = known  # current-period part added after the solve
        M = np.zeros((nN, nN))
        rhs = np.zeros(nN)
        for n in inst.nodes:
            i = idx[n.id]
            ins = inst.in_pipes(n.id)
            outs = inst.out_pipes(n.id)
            out_mass = sum(flows[b, tau] for b in outs)
            if not outs:
                out_mass = sum(flows[b, tau] for b in ins)
            M[i, i] += c * out_mass
            for b in ins:
                M[i, idx[inst.pipelines[b].from_node]] -= c * flows[b, tau] * g[b]
                rhs[i] += c * flows[b, tau] * a[b]
            if n.return_node is not None:
                r = n.return_node
                M[i, idx[r]] -= c * sum(flows[b, tau] for b in inst.in_pipes(r))
            rhs[i] += heat[i, tau] * 1e6
            if out_mass == 0 and n.id not in src_of and n.return_node is None:
                raise ValueError(f"node {n.id} carries no flow at period {tau}")
        try:
            t = np.linalg.solve(M, rhs)
        except np.linalg.LinAlgError as exc:
            raise ValueError(f"network temperature system is singular at period {tau}") from exc
        node_t[:, tau] = t
        for b, p in enumerate(inst.pipelines):
            t_from = t[idx[p.from_node]]
            hist[b].inlet_temp[tau + p.history_depth] = t_from
            lossless[b, tau] += weights[b][tau].exit_weights[0] * t_from
            outlet[b, tau] = a[b] + g[b] * t_from
    inlet = np.array([h.inlet_temp[h.depth :] for h in hist])
    return NetworkResult(node_t, inlet, lossless, outlet, weights, hist)


def network_heat_balance(inst: DispatchInstance, result: NetworkResult, flows: np.ndarray, heat: np.ndarray) -> dict:
    """Energy bookkeeping over the horizon, in MWh.

    Pipe storage is the enthalpy of the water parcels resident in each pipe
    (relative to 0 degC), so ``net_injection`` should match
    ``losses + storage_change + exported``, where ``exported`` is the
    enthalpy carried out of open ends of the network.
    """
    dt = inst.horizon.dt
    const = inst.constants
    T = inst.horizon.periods
    to_mwh = 1.0 / 3.6e9
    losses = 0.0
    storage = []
    for b, p in enumerate(inst.pipelines):
        h = result.histories[b]
        losses += const.c * dt * float(np.sum(flows[b] * (result.lossless_temp[b] - result.outlet_temp[b])))
        s = []
        for tau in (-1, T - 1):
            if tau < 0:
                # content at the start: the last parcels of the history
                m_win = h.mass_flow[: h.depth][::-1]
                t_win = h.inlet_temp[: h.depth][::-1]
                w = fill_vector(m_win * dt, p.water_mass(const.rho))
            else:
                w = result.weights[b][tau].alpha
                m_win, t_win = h.window(tau, p.history_depth)
            s.append(const.c * dt * float(np.sum(w * m_win * t_win)))
        storage.append(s[1] - s[0])
    exported = 0.0
    idx = inst.node_index()
    for n in inst.nodes:
        if not inst.out_pipes(n.id) and inst.return_source(n.id) is None:
            m = sum(flows[b] for b in inst.in_pipes(n.id))
            exported += const.c * dt * float(np.sum(m * result.node_temp[idx[n.id]]))
    net = float(heat.sum()) * 1e6 * dt
    return {
        "exported": exported * to_mwh,
        "net_injection": net * to_mwh,
        "losses": losses * to_mwh,
        "storage_change": float(sum(storage)) * to_mwh,
    }
