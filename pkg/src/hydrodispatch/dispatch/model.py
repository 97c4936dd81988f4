"""Assembly of the integrated heat-and-power dispatch model.

Decision variables split into three blocks: ``x`` (unit outputs, reserves,
temperatures, pressures, building states), ``m`` (pipeline mass flows per
period) and ``eta`` (water-column weights, a function of ``m``). For fixed
``m`` and ``eta`` every constraint is linear in ``x`` and the cost is a
convex quadratic, so the subproblem is a QP.

Rows whose coefficients depend on ``m`` are the coupling rows ``g1``:
node heat mixing (MW), lossless outlet relation (MW), outlet heat loss
(degC), pressure drop (kPa) and, with ``pump_load``, pump power (MW).

Units inside the model: MW, degC, kPa, kW for room heat input.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp

from ..building import assemble_building_constraints
from ..network import DispatchInstance
from ..pipeline import WaterColumnWeights, weights_from_window
from ..qp import QpProblem

__all__ = ["Layout", "DispatchModel", "Coupling"]

MIXING, LOSSLESS, LOSS, PRESSURE, PUMP = "mixing", "lossless", "loss", "pressure", "pump"


class Layout:
    """Named blocks of consecutive variable indices."""

    def __init__(self):
        self.n = 0
        self.blocks: dict[str, np.ndarray] = {}

    def add(self, name: str, shape) -> np.ndarray:
        shape = tuple(np.atleast_1d(shape))
        size = int(np.prod(shape))
        idx = np.arange(self.n, self.n + size).reshape(shape)
        self.n += size
        self.blocks[name] = idx
        return idx

    def __getitem__(self, name: str) -> np.ndarray:
        return self.blocks[name]


class _Rows:
    """Triplet accumulator for a block of linear rows."""

    def __init__(self, n: int):
        self.n = n
        self.r, self.c, self.v = [], [], []
        self.rhs: list[float] = []
        self.tags: list[str] = []

    def add(self, entries, rhs: float, tag: str) -> int:
        row = len(self.rhs)
        for col, val in entries:
            if val != 0.0:
                self.r.append(row)
                self.c.append(int(col))
                self.v.append(float(val))
        self.rhs.append(float(rhs))
        self.tags.append(tag)
        return row

    def matrix(self) -> sp.csr_matrix:
        return sp.csr_matrix((self.v, (self.r, self.c)), shape=(len(self.rhs), self.n))

    def vector(self) -> np.ndarray:
        return np.asarray(self.rhs, dtype=float)


def _equilibrate(M: sp.csr_matrix, rhs: np.ndarray) -> tuple[sp.csr_matrix, np.ndarray]:
    if M.shape[0] == 0:
        return M, rhs
    scale = np.asarray(abs(M).max(axis=1).todense()).ravel()
    scale[scale == 0] = 1.0
    D = sp.diags(1.0 / scale)
    return (D @ M).tocsr(), rhs / scale


@dataclass
class Coupling:
    """Coupling rows ``g1(x) = A x - b`` for one flow vector."""

    A: sp.csr_matrix
    b: np.ndarray
    tags: list[str]

    def value(self, x: np.ndarray) -> np.ndarray:
        return self.A @ x - self.b

    def rows(self, tag: str) -> np.ndarray:
        return np.array([i for i, t in enumerate(self.tags) if t == tag], dtype=int)


@dataclass
class _FrontDerivative:
    """Sensitivity of one fractional weight to the flows that precede it."""

    k: int  # periods back of the fractional entry
    dw: dict[int, float] = field(default_factory=dict)  # periods back -> d weight / d m


def _front_derivative(w: np.ndarray, m_win: np.ndarray, start: int) -> _FrontDerivative:
    nz = np.flatnonzero(w[start:]) + start
    K = int(nz[-1])
    d = _FrontDerivative(K)
    for k in range(start, K):
        d.dw[k] = -1.0 / m_win[K]
    d.dw[K] = -w[K] / m_win[K]
    return d


class DispatchModel:
    """Linear-quadratic structure of the dispatch problem for one instance.

    ``steady`` swaps the transient pipeline relations for the no-storage
    outlet formula; ``fixed_room`` pins room temperatures at their lower
    bound; ``pump_load`` adds pump power to the electric balance.
    """

    def __init__(self, inst: DispatchInstance, *, steady: bool = False, fixed_room: bool = False, pump_load: bool = False):
        self.inst = inst
        self.steady = steady
        self.fixed_room = fixed_room
        self.pump_load = pump_load
        self.T = T = inst.horizon.periods
        self.dt = inst.horizon.dt
        self.dt_h = inst.horizon.dt_hours
        self.const = inst.constants
        self.c6 = inst.constants.c / 1e6
        self.node_idx = inst.node_index()
        self.pumped = [b for b, p in enumerate(inst.pipelines) if p.pump is not None]
        nN, nB = len(inst.nodes), len(inst.pipelines)

        L = self.layout = Layout()
        self.zeta = [L.add(f"zeta:{u.id}", (len(u.vertices), T)) for u in inst.chp]
        L.add("p_chp", (len(inst.chp), T))
        L.add("q_chp", (len(inst.chp), T))
        L.add("p_th", (len(inst.thermal), T))
        L.add("ru", (len(inst.thermal), T))
        L.add("rd", (len(inst.thermal), T))
        L.add("p_re", (len(inst.renewable), T))
        L.add("t_n", (nN, T))
        L.add("t_e", (nB, T))
        L.add("t_lossless", (nB, T))
        L.add("h_n", (nN, T))
        L.add("h_pump", (len(self.pumped), T))
        L.add("q_n", (nN, T))
        if pump_load:
            L.add("p_pump", (len(self.pumped), T))
        self.bld = []
        for bspec in inst.buildings:
            bc = assemble_building_constraints(bspec, T, self.dt, self.const, fixed_room=fixed_room)
            off = L.n
            L.add(f"bld:{bspec.id}", bc.n_vars)
            self.bld.append((bc, off))
        self.n = L.n

        # flow block
        self.m_index = np.arange(nB * T).reshape(nB, T)
        self.n_m = nB * T
        self.m_lb = np.repeat([p.m_min for p in inst.pipelines], T)
        self.m_ub = np.repeat([p.m_max for p in inst.pipelines], T)

        self._build_objective()
        self._build_static()

    # ------------------------------------------------------------------
    # helpers
    # ------------------------------------------------------------------
    def var(self, name: str, *idx) -> int:
        return int(self.layout[name][idx])

    def bld_var(self, k: int, name: str, *idx) -> int:
        bc, off = self.bld[k]
        return int(off + bc.index[name][idx])

    def flows(self, m: np.ndarray) -> np.ndarray:
        return np.asarray(m, dtype=float).reshape(len(self.inst.pipelines), self.T)

    def nominal_flows(self) -> np.ndarray:
        rows = []
        for p in self.inst.pipelines:
            if p.schedule is None:
                raise ValueError(f"pipeline {p.id} has no nominal flow schedule")
            rows.append(p.schedule.mass_flow)
        return np.array(rows, dtype=float).ravel()

    def window(self, b: int, flows: np.ndarray, tau: int) -> tuple[np.ndarray, np.ndarray]:
        """``m[tau-k]`` for ``k = 0..N_b`` and the in-horizon mask."""
        p = self.inst.pipelines[b]
        full = np.concatenate([p.history_flow, flows[b]])
        hi = tau + p.history_depth
        win = full[hi - p.history_depth : hi + 1][::-1]
        inside = tau - np.arange(p.history_depth + 1) >= 0
        return win, inside

    def weights(self, m: np.ndarray) -> list[list[WaterColumnWeights]]:
        """Water-column weights of every pipe and period for flows ``m``."""
        F = self.flows(m)
        out = []
        for b, p in enumerate(self.inst.pipelines):
            content = p.water_mass(self.const.rho)
            out.append([weights_from_window(self.window(b, F, tau)[0], self.dt, content) for tau in range(self.T)])
        return out

    # ------------------------------------------------------------------
    # objective
    # ------------------------------------------------------------------
    def _build_objective(self):
        inst, T, dt_h = self.inst, self.T, self.dt_h
        Pr, Pc, Pv = [], [], []
        q = np.zeros(self.n)
        r = 0.0
        for i, u in enumerate(inst.chp):
            a0, a1, a2, a3, a4, a5 = u.cost
            for t in range(T):
                ip, iq = self.var("p_chp", i, t), self.var("q_chp", i, t)
                q[ip] += a1 * dt_h
                q[iq] += a2 * dt_h
                Pr += [ip, iq, ip, iq]
                Pc += [ip, iq, iq, ip]
                Pv += [2 * a3 * dt_h, 2 * a4 * dt_h, a5 * dt_h, a5 * dt_h]
                r += a0 * dt_h
        for i, u in enumerate(inst.thermal):
            d0, d1, d2 = u.cost
            for t in range(T):
                ip = self.var("p_th", i, t)
                q[ip] += d1 * dt_h
                Pr.append(ip)
                Pc.append(ip)
                Pv.append(2 * d2 * dt_h)
                r += d0 * dt_h
        for i, u in enumerate(inst.renewable):
            for t in range(T):
                ip = self.var("p_re", i, t)
                av = u.available[t]
                q[ip] += -2 * u.penalty * av * dt_h
                Pr.append(ip)
                Pc.append(ip)
                Pv.append(2 * u.penalty * dt_h)
                r += u.penalty * av * av * dt_h
        self.P = sp.csr_matrix((Pv, (Pr, Pc)), shape=(self.n, self.n))
        self.q = q
        self.r = r

    def cost_breakdown(self, x: np.ndarray) -> dict[str, float]:
        inst, dt_h = self.inst, self.dt_h
        chp = thermal = pen = 0.0
        for i, u in enumerate(inst.chp):
            a0, a1, a2, a3, a4, a5 = u.cost
            p = x[self.layout["p_chp"][i]]
            qq = x[self.layout["q_chp"][i]]
            chp += float(np.sum(a0 + a1 * p + a2 * qq + a3 * p * p + a4 * qq * qq + a5 * p * qq)) * dt_h
        for i, u in enumerate(inst.thermal):
            d0, d1, d2 = u.cost
            p = x[self.layout["p_th"][i]]
            thermal += float(np.sum(d0 + d1 * p + d2 * p * p)) * dt_h
        for i, u in enumerate(inst.renewable):
            p = x[self.layout["p_re"][i]]
            pen += float(np.sum(u.penalty * (u.available - p) ** 2)) * dt_h
        return {"total": chp + thermal + pen, "chp": chp, "thermal": thermal, "penalty": pen}

    # ------------------------------------------------------------------
    # constraints that do not depend on the flows
    # ------------------------------------------------------------------
    def _build_static(self):
        inst, T, dt_h = self.inst, self.T, self.dt_h
        n = self.n
        E = _Rows(n)
        G = _Rows(n)
        lb = np.full(n, -np.inf)
        ub = np.full(n, np.inf)

        for i, u in enumerate(inst.chp):
            Z = self.zeta[i]
            lb[Z.ravel()] = 0.0
            ub[Z.ravel()] = 1.0
            V = np.asarray(u.vertices, dtype=float)
            for t in range(T):
                ip, iq = self.var("p_chp", i, t), self.var("q_chp", i, t)
                E.add([(ip, 1.0)] + [(Z[k, t], -V[k, 0]) for k in range(len(V))], 0.0, "chp_p")
                E.add([(iq, 1.0)] + [(Z[k, t], -V[k, 1]) for k in range(len(V))], 0.0, "chp_q")
                E.add([(Z[k, t], 1.0) for k in range(len(V))], 1.0, "chp_convex")
            for name, (down, up), init in (
                ("p_chp", u.ramp_p, u.initial_p),
                ("q_chp", u.ramp_q, u.initial_q),
            ):
                self._ramp_rows(G, name, i, down, up, init, "chp_ramp")

        for i, u in enumerate(inst.thermal):
            for t in range(T):
                ip, iu, idn = self.var("p_th", i, t), self.var("ru", i, t), self.var("rd", i, t)
                lb[ip], ub[ip] = u.p_min, u.p_max
                lb[iu] = lb[idn] = 0.0
                ub[iu] = u.ramp[1] * dt_h
                ub[idn] = u.ramp[0] * dt_h
                G.add([(iu, 1.0), (ip, 1.0)], u.p_max, "reserve_head")
                G.add([(idn, 1.0), (ip, -1.0)], -u.p_min, "reserve_foot")
            self._ramp_rows(G, "p_th", i, u.ramp[0], u.ramp[1], u.initial_p, "thermal_ramp")
        if inst.thermal and inst.grid is not None:
            for t in range(T):
                G.add([(self.var("ru", i, t), -1.0) for i in range(len(inst.thermal))], -inst.grid.reserve_up, "reserve_up")
                G.add([(self.var("rd", i, t), -1.0) for i in range(len(inst.thermal))], -inst.grid.reserve_down, "reserve_down")

        for i, u in enumerate(inst.renewable):
            for t in range(T):
                ip = self.var("p_re", i, t)
                lb[ip], ub[ip] = 0.0, u.available[t]

        if inst.grid is not None:
            self._grid_rows(E, G)

        # node temperatures and pressures
        for j, nd in enumerate(inst.nodes):
            for t in range(T):
                it, ih = self.var("t_n", j, t), self.var("h_n", j, t)
                lb[it], ub[it] = nd.t_min, nd.t_max
                lb[ih], ub[ih] = nd.h_min / 1e3, nd.h_max / 1e3
        for k, b in enumerate(self.pumped):
            pump = inst.pipelines[b].pump
            for t in range(T):
                ih = self.var("h_pump", k, t)
                lb[ih], ub[ih] = pump.head_min / 1e3, pump.head_max / 1e3

        # node heat: CHP injection at sources, room heat at loads
        for j, nd in enumerate(inst.nodes):
            chps = [i for i, u in enumerate(inst.chp) if u.dhs_node == nd.id]
            blds = [k for k, bs in enumerate(inst.buildings) if bs.dhs_node == nd.id]
            for t in range(T):
                ent = [(self.var("q_n", j, t), 1.0)]
                ent += [(self.var("q_chp", i, t), -1.0) for i in chps]
                ent += [(self.bld_var(k, "heat_input", t), inst.buildings[k].room_count / 1e3) for k in blds]
                E.add(ent, 0.0, "node_heat")

        # buildings, heat input in kW
        for k, (bc, off) in enumerate(self.bld):
            col_scale = np.ones(bc.n_vars)
            col_scale[bc.index["heat_input"]] = 1e3
            Ab = (bc.A_eq @ sp.diags(col_scale)).tocsr()
            for row in range(Ab.shape[0]):
                sl = slice(Ab.indptr[row], Ab.indptr[row + 1])
                E.add(zip(off + Ab.indices[sl], Ab.data[sl]), bc.b_eq[row], "building")
            Gb = bc.G.tocsr()
            for row in range(Gb.shape[0]):
                sl = slice(Gb.indptr[row], Gb.indptr[row + 1])
                G.add(zip(off + Gb.indices[sl], Gb.data[sl]), bc.h[row], "room_band")
            lb[off : off + bc.n_vars] = bc.lb / col_scale
            ub[off : off + bc.n_vars] = bc.ub / col_scale

        self.A_s, self.b_s = _equilibrate(E.matrix(), E.vector())
        self.G_s, self.h_s = _equilibrate(G.matrix(), G.vector())
        self.eq_tags = E.tags
        self.ineq_tags = G.tags
        self.lb, self.ub = lb, ub

    def _ramp_rows(self, G: _Rows, name: str, i: int, down: float, up: float, init, tag: str):
        T, dt_h = self.T, self.dt_h
        for t in range(T):
            cur = self.var(name, i, t)
            if t == 0:
                if init is None:
                    continue
                if math.isfinite(up):
                    G.add([(cur, 1.0)], float(init) + up * dt_h, tag)
                if math.isfinite(down):
                    G.add([(cur, -1.0)], -float(init) + down * dt_h, tag)
                continue
            prev = self.var(name, i, t - 1)
            if math.isfinite(up):
                G.add([(cur, 1.0), (prev, -1.0)], up * dt_h, tag)
            if math.isfinite(down):
                G.add([(cur, -1.0), (prev, 1.0)], down * dt_h, tag)

    def _injections(self, t: int) -> dict[int, list[tuple[int, float]]]:
        """Variables injecting power at each bus in period ``t``."""
        inst = self.inst
        g = inst.grid
        inj: dict[int, list[tuple[int, float]]] = {k: [] for k in range(len(g.buses))}
        for i, u in enumerate(inst.chp):
            inj[g.bus_index(u.bus)].append((self.var("p_chp", i, t), 1.0))
        for i, u in enumerate(inst.thermal):
            inj[g.bus_index(u.bus)].append((self.var("p_th", i, t), 1.0))
        for i, u in enumerate(inst.renewable):
            inj[g.bus_index(u.bus)].append((self.var("p_re", i, t), 1.0))
        if self.pump_load:
            for k, b in enumerate(self.pumped):
                bus = inst.pipelines[b].pump.bus
                if bus is None:
                    raise ValueError(f"pipeline {inst.pipelines[b].id}: pump has no bus for pump_load")
                inj[g.bus_index(bus)].append((self.var("p_pump", k, t), -1.0))
        return inj

    def _grid_rows(self, E: _Rows, G: _Rows):
        g = self.inst.grid
        for t in range(self.T):
            inj = self._injections(t)
            E.add([e for lst in inj.values() for e in lst], float(g.demand[:, t].sum()), "power_balance")
            for line in g.lines:
                ent: dict[int, float] = {}
                for bus, lst in inj.items():
                    for col, sgn in lst:
                        ent[col] = ent.get(col, 0.0) + line.shift_factors[bus] * sgn
                base = float(line.shift_factors @ g.demand[:, t])
                G.add(ent.items(), line.capacity + base, "line_max")
                G.add([(c_, -v_) for c_, v_ in ent.items()], line.capacity - base, "line_min")

    # ------------------------------------------------------------------
    # coupling rows
    # ------------------------------------------------------------------
    def coupling(self, m: np.ndarray, eta=None) -> Coupling:
        inst, T = self.inst, self.T
        F = self.flows(m)
        if eta is None and not self.steady:
            eta = self.weights(m)
        rows = _Rows(self.n)
        c6 = self.c6
        idx = self.node_idx
        for t in range(T):
            for j, nd in enumerate(inst.nodes):
                ins, outs = inst.in_pipes(nd.id), inst.out_pipes(nd.id)
                out_mass = sum(F[b, t] for b in (outs if outs else ins))
                ent = [(self.var("t_n", j, t), c6 * out_mass), (self.var("q_n", j, t), -1.0)]
                ent += [(self.var("t_e", b, t), -c6 * F[b, t]) for b in ins]
                if nd.return_node is not None:
                    r = idx[nd.return_node]
                    back = sum(F[b, t] for b in inst.in_pipes(nd.return_node))
                    ent.append((self.var("t_n", r, t), -c6 * back))
                rows.add(_merge(ent), 0.0, MIXING)
            for b, p in enumerate(inst.pipelines):
                src = idx[p.from_node]
                if self.steady:
                    rows.add([(self.var("t_lossless", b, t), 1.0), (self.var("t_n", src, t), -1.0)], 0.0, LOSSLESS)
                    Fs = math.exp(-p.heat_transfer_coeff * p.length / (self.const.c * F[b, t]))
                else:
                    w = eta[b][t]
                    win, inside = self.window(b, F, t)
                    ew = w.exit_weights
                    ent = [(self.var("t_lossless", b, t), c6 * F[b, t])]
                    rhs = 0.0
                    for k in np.flatnonzero(ew):
                        if inside[k]:
                            ent.append((self.var("t_n", src, t - k), -c6 * ew[k] * win[k]))
                        else:
                            rhs += c6 * ew[k] * win[k] * p.history_temp[p.history_depth + t - k]
                    rows.add(_merge(ent), rhs, LOSSLESS)
                    kappa = p.heat_transfer_coeff * self.dt / (2 * p.area * self.const.rho * self.const.c)
                    Fs = math.exp(-kappa * (w.alpha.sum() + w.beta[1:].sum()))
                t_am = p.ambient_temp[t]
                rows.add([(self.var("t_e", b, t), 1.0), (self.var("t_lossless", b, t), -Fs)], t_am * (1 - Fs), LOSS)
            for b, p in enumerate(inst.pipelines):
                ent = [(self.var("h_n", idx[p.from_node], t), 1.0), (self.var("h_n", idx[p.to_node], t), -1.0)]
                if p.pump is not None:
                    ent.append((self.var("h_pump", self.pumped.index(b), t), 1.0))
                rows.add(ent, p.resistance * F[b, t] ** 2 / 1e3, PRESSURE)
            if self.pump_load:
                for k, b in enumerate(self.pumped):
                    pump = inst.pipelines[b].pump
                    kp = 1e3 / (self.const.rho * pump.efficiency * 1e6)
                    rows.add([(self.var("p_pump", k, t), 1.0), (self.var("h_pump", k, t), -kp * F[b, t])], 0.0, PUMP)
        return Coupling(rows.matrix(), rows.vector(), rows.tags)

    def coupling_jacobian(self, x: np.ndarray, m: np.ndarray, eta=None) -> sp.csr_matrix:
        """Total derivative of ``g1(x, m, eta(m))`` with respect to ``m``.

        Weight sensitivities use the fractional front entry only; the jumps
        at exact-fill points are ignored.
        """
        inst, T = self.inst, self.T
        F = self.flows(m)
        if eta is None and not self.steady:
            eta = self.weights(m)
        idx = self.node_idx
        c6 = self.c6
        R, C, V = [], [], []
        row = 0

        def put(r, b, t, v):
            if v != 0.0:
                R.append(r)
                C.append(int(self.m_index[b, t]))
                V.append(float(v))

        def tn(j, t):
            return x[self.var("t_n", j, t)]

        for t in range(T):
            for j, nd in enumerate(inst.nodes):
                ins, outs = inst.in_pipes(nd.id), inst.out_pipes(nd.id)
                for b in outs if outs else ins:
                    put(row, b, t, c6 * tn(j, t))
                for b in ins:
                    put(row, b, t, -c6 * x[self.var("t_e", b, t)])
                if nd.return_node is not None:
                    r = idx[nd.return_node]
                    for b in inst.in_pipes(nd.return_node):
                        put(row, b, t, -c6 * tn(r, t))
                row += 1
            for b, p in enumerate(inst.pipelines):
                src = idx[p.from_node]
                tl = x[self.var("t_lossless", b, t)]
                t_am = p.ambient_temp[t]
                if self.steady:
                    row += 1  # lossless row does not involve m
                    Fs = math.exp(-p.heat_transfer_coeff * p.length / (self.const.c * F[b, t]))
                    dF = Fs * p.heat_transfer_coeff * p.length / (self.const.c * F[b, t] ** 2)
                    put(row, b, t, -(tl - t_am) * dF)
                    row += 1
                    continue
                w = eta[b][t]
                win, inside = self.window(b, F, t)
                ew = w.exit_weights

                def ts(k):
                    if inside[k]:
                        return tn(src, t - k)
                    return p.history_temp[p.history_depth + t - k]

                da = _front_derivative(w.alpha, win, 0)
                db = _front_derivative(w.beta, win, 1)
                # lossless row: c6 * (m^t t' - sum_k ew_k m^{t-k} ts^{t-k})
                dl: dict[int, float] = {0: c6 * tl}
                for k in np.flatnonzero(ew):
                    dl[k] = dl.get(k, 0.0) - c6 * ew[k] * ts(k)
                for k, v in db.dw.items():
                    dl[k] = dl.get(k, 0.0) - c6 * v * win[db.k] * ts(db.k)
                for k, v in da.dw.items():
                    dl[k] = dl.get(k, 0.0) + c6 * v * win[da.k] * ts(da.k)
                for k, v in dl.items():
                    if inside[k]:
                        put(row, b, t - k, v)
                row += 1
                # loss row: t_e - t_am - Fs (t' - t_am)
                kappa = p.heat_transfer_coeff * self.dt / (2 * p.area * self.const.rho * self.const.c)
                Fs = math.exp(-kappa * (w.alpha.sum() + w.beta[1:].sum()))
                dS: dict[int, float] = {}
                for d in (da, db):
                    for k, v in d.dw.items():
                        dS[k] = dS.get(k, 0.0) + v
                for k, v in dS.items():
                    if inside[k]:
                        put(row, b, t - k, (tl - t_am) * kappa * Fs * v)
                row += 1
            for b, p in enumerate(inst.pipelines):
                put(row, b, t, -2.0 * p.resistance * F[b, t] / 1e3)
                row += 1
            if self.pump_load:
                for k, b in enumerate(self.pumped):
                    pump = inst.pipelines[b].pump
                    kp = 1e3 / (self.const.rho * pump.efficiency * 1e6)
                    put(row, b, t, -kp * x[self.var("h_pump", k, t)])
                    row += 1
        return sp.csr_matrix((V, (R, C)), shape=(row, self.n_m))

    # ------------------------------------------------------------------
    # problems
    # ------------------------------------------------------------------
    def subproblem(self, m: np.ndarray, eta=None) -> tuple[QpProblem, Coupling]:
        cp = self.coupling(m, eta)
        A = sp.vstack([self.A_s, cp.A]).tocsr()
        b = np.concatenate([self.b_s, cp.b])
        prob = QpProblem(q=self.q, P=self.P, A=A, b=b, G=self.G_s, h=self.h_s, lb=self.lb, ub=self.ub, r=self.r)
        return prob, cp

    def feasibility_problem(self, m: np.ndarray, eta=None) -> tuple[QpProblem, Coupling, np.ndarray]:
        """LP minimising the total slack on the relaxed mixing rows.

        Returns the problem, the coupling rows and the positions of the
        relaxed rows inside the problem's equality block.
        """
        cp = self.coupling(m, eta)
        relax = cp.rows(MIXING)
        k = relax.size
        n = self.n
        A_top = sp.hstack([self.A_s, sp.csr_matrix((self.A_s.shape[0], 2 * k))])
        S = sp.csr_matrix((np.ones(k), (relax, np.arange(k))), shape=(cp.A.shape[0], k))
        A_cp = sp.hstack([cp.A, S, -S])
        A = sp.vstack([A_top, A_cp]).tocsr()
        b = np.concatenate([self.b_s, cp.b])
        G = sp.hstack([self.G_s, sp.csr_matrix((self.G_s.shape[0], 2 * k))]).tocsr()
        q = np.concatenate([np.zeros(n), np.ones(2 * k)])
        lb = np.concatenate([self.lb, np.zeros(2 * k)])
        ub = np.concatenate([self.ub, np.full(2 * k, np.inf)])
        prob = QpProblem(q=q, A=A, b=b, G=G, h=self.h_s, lb=lb, ub=ub)
        return prob, cp, self.A_s.shape[0] + relax

    # ------------------------------------------------------------------
    # flow domain
    # ------------------------------------------------------------------
    def flow_domain(self) -> tuple[sp.csr_matrix, np.ndarray]:
        """Continuity rows ``A m = 0`` with linearly dependent rows removed."""
        inst = self.inst
        rows = _Rows(self.n_m)
        for t in range(self.T):
            for nd in inst.nodes:
                ins, outs = inst.in_pipes(nd.id), inst.out_pipes(nd.id)
                if nd.return_node is not None:
                    ent = [(self.m_index[b, t], 1.0) for b in outs]
                    ent += [(self.m_index[b, t], -1.0) for b in inst.in_pipes(nd.return_node)]
                    rows.add(_merge(ent), 0.0, "continuity")
                elif ins and outs:
                    ent = [(self.m_index[b, t], 1.0) for b in ins] + [(self.m_index[b, t], -1.0) for b in outs]
                    rows.add(_merge(ent), 0.0, "continuity")
        A = rows.matrix()
        if A.shape[0] == 0:
            return A, np.zeros(0)
        # keep a maximal independent subset of rows
        _, Rf, piv = la.qr(A.toarray().T, pivoting=True, mode="economic")
        d = np.abs(np.diag(Rf))
        rank = int(np.sum(d > 1e-10 * max(1.0, d.max())))
        keep = np.sort(piv[:rank])
        return A[keep].tocsr(), np.zeros(len(keep))

    def extract(self, x: np.ndarray, m: np.ndarray) -> dict[str, np.ndarray]:
        """Named physical quantities of a solution, in instance units."""
        inst = self.inst
        L = self.layout
        F = self.flows(m)
        vals: dict[str, np.ndarray] = {}
        for name in ("p_chp", "q_chp", "p_th", "ru", "rd", "p_re", "t_n", "t_e", "t_lossless", "q_n"):
            vals[name] = x[L[name]]
        vals["zeta"] = [x[Z] for Z in self.zeta]
        vals["h_n"] = x[L["h_n"]] * 1e3
        heads = np.zeros((len(inst.pipelines), self.T))
        for k, b in enumerate(self.pumped):
            heads[b] = x[L["h_pump"][k]] * 1e3
        vals["h_pump"] = heads
        pp = np.zeros((len(inst.pipelines), self.T))
        for b in self.pumped:
            pump = inst.pipelines[b].pump
            pp[b] = F[b] * heads[b] / (self.const.rho * pump.efficiency) / 1e6
        vals["p_pump"] = pp
        vals["t_s"] = np.array([x[L["t_n"][self.node_idx[p.from_node]]] for p in inst.pipelines]).reshape(len(inst.pipelines), self.T)
        vals["curtailment"] = np.array([u.available - x[L["p_re"][i]] for i, u in enumerate(inst.renewable)]).reshape(len(inst.renewable), self.T)
        vals["t_wall"], vals["t_room"], vals["heat_input"] = [], [], []
        for bc, off in self.bld:
            vals["t_wall"].append(x[off + bc.index["t_wall"]])
            vals["t_room"].append(x[off + bc.index["t_room"]])
            vals["heat_input"].append(x[off + bc.index["heat_input"]] * 1e3)
        vals["m"] = F.copy()
        return vals


def _merge(entries):
    acc: dict[int, float] = {}
    for col, val in entries:
        acc[int(col)] = acc.get(int(col), 0.0) + float(val)
    return list(acc.items())
