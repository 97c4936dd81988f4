"""Response-factor heat balance of a building room.

Each room has ``N_w`` wall surface nodes and one air node. The wall balance
combines conduction through response factors, radiation between walls and
convection to the air; the air balance adds ventilation, heat gains and the
air heat capacity over one period.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .network import BuildingSpec, Constants

__all__ = [
    "BuildingState",
    "BuildingConstraints",
    "building_step",
    "simulate_building",
    "required_heat",
    "building_residuals",
    "assemble_building_constraints",
]


@dataclass
class BuildingState:
    t_wall: np.ndarray  # (Nw, T)
    t_room: np.ndarray  # (T,)
    heat_input: np.ndarray  # (T,) W per room

    @classmethod
    def empty(cls, spec: BuildingSpec, periods: int) -> "BuildingState":
        return cls(np.full((spec.n_walls, periods), np.nan), np.full(periods, np.nan), np.full(periods, np.nan))


def _past_wall(spec: BuildingSpec, state: BuildingState, tau: int, j: int) -> np.ndarray:
    t = tau - j
    return state.t_wall[:, t] if t >= 0 else spec.wall_history[:, spec.n_factors + t]


def _past_room(spec: BuildingSpec, state: BuildingState, tau: int, j: int) -> float:
    t = tau - j
    return state.t_room[t] if t >= 0 else spec.room_history[spec.n_factors + t]


def _outdoor(spec: BuildingSpec, tau: int) -> float:
    return spec.outdoor_temp[tau] if tau >= 0 else spec.outdoor_history[spec.n_factors + tau]


def _conduction_known(spec: BuildingSpec, state: BuildingState, tau: int) -> np.ndarray:
    """Conduction terms that do not involve the current wall temperatures."""
    acc = np.zeros(spec.n_walls)
    for j in range(spec.n_factors + 1):
        acc += spec.Y[j] * _outdoor(spec, tau - j)
    for j in range(1, spec.n_factors + 1):
        acc -= spec.Z[j] * _past_wall(spec, state, tau, j)
    return acc


def _air_coeffs(spec: BuildingSpec, tau: int, dt: float, const: Constants) -> tuple[float, float]:
    vent = spec.ventilation[tau] * const.c_air * const.rho_air
    cap = spec.volume * const.c_air * const.rho_air / dt
    return vent, cap


def _step_matrix(spec: BuildingSpec, tau: int, dt: float, const: Constants) -> np.ndarray:
    nw = spec.n_walls
    M = np.zeros((nw + 1, nw + 1))
    phi = spec.radiation
    for i, w in enumerate(spec.walls):
        M[i, :nw] = phi[i]
        M[i, i] = -(spec.Z[0] + phi[i].sum() - phi[i, i] + w.conv_coeff)
        M[i, nw] = w.conv_coeff
    sh = np.array([w.area * w.conv_coeff for w in spec.walls])
    vent, cap = _air_coeffs(spec, tau, dt, const)
    M[nw, :nw] = sh
    M[nw, nw] = -(sh.sum() + vent + cap)
    return M


def building_step(
    spec: BuildingSpec,
    state: BuildingState,
    tau: int,
    heat_input: float,
    dt: float,
    const: Constants = Constants(),
) -> tuple[np.ndarray, float]:
    """Solve the wall and air balances of period ``tau`` for a given heat input.

    ``state`` must hold the periods before ``tau``; earlier periods come from
    the spec's pre-horizon history.
    """
    nw = spec.n_walls
    M = _step_matrix(spec, tau, dt, const)
    rhs = np.empty(nw + 1)
    rhs[:nw] = -_conduction_known(spec, state, tau)
    vent, cap = _air_coeffs(spec, tau, dt, const)
    gain = spec.internal_gain[tau] + heat_input
    rhs[nw] = -vent * spec.outdoor_temp[tau] - gain - cap * _past_room(spec, state, tau, 1)
    try:
        sol = np.linalg.solve(M, rhs)
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError(f"building {spec.id}: singular heat balance at period {tau}") from exc
    return sol[:nw], float(sol[nw])


def simulate_building(
    spec: BuildingSpec, heat_input: np.ndarray, dt: float, const: Constants = Constants()
) -> BuildingState:
    heat_input = np.asarray(heat_input, dtype=float)
    state = BuildingState.empty(spec, len(heat_input))
    for tau in range(len(heat_input)):
        tw, tr = building_step(spec, state, tau, heat_input[tau], dt, const)
        state.t_wall[:, tau] = tw
        state.t_room[tau] = tr
        state.heat_input[tau] = heat_input[tau]
    return state


def required_heat(
    spec: BuildingSpec, t_room: np.ndarray, dt: float, const: Constants = Constants()
) -> BuildingState:
    """Heat input per room that holds a prescribed room temperature trajectory."""
    t_room = np.asarray(t_room, dtype=float)
    nw = spec.n_walls
    state = BuildingState.empty(spec, len(t_room))
    for tau in range(len(t_room)):
        M = _step_matrix(spec, tau, dt, const)
        # swap the room-temperature column for the heat-input unknown
        A = M.copy()
        A[:, nw] = 0.0
        A[nw, nw] = 1.0
        rhs = np.empty(nw + 1)
        rhs[:nw] = -_conduction_known(spec, state, tau) - M[:nw, nw] * t_room[tau]
        vent, cap = _air_coeffs(spec, tau, dt, const)
        rhs[nw] = (
            -vent * spec.outdoor_temp[tau]
            - spec.internal_gain[tau]
            - cap * _past_room(spec, state, tau, 1)
            - M[nw, nw] * t_room[tau]
        )
        sol = np.linalg.solve(A, rhs)
        state.t_wall[:, tau] = sol[:nw]
        state.t_room[tau] = t_room[tau]
        state.heat_input[tau] = sol[nw]
    return state


def building_residuals(
    spec: BuildingSpec, state: BuildingState, dt: float, const: Constants = Constants()
) -> tuple[np.ndarray, np.ndarray]:
    """Relative residuals of the wall (Nw, T) and air (T,) balances.

    Each residual is divided by the largest magnitude among its terms (at
    least 1), so values near machine precision mean the balance holds.
    """
    T = len(state.t_room)
    nw = spec.n_walls
    wall_res = np.zeros((nw, T))
    air_res = np.zeros(T)
    for tau in range(T):
        tw = state.t_wall[:, tau]
        tr = state.t_room[tau]
        for i, w in enumerate(spec.walls):
            cond_in = sum(spec.Y[j] * _outdoor(spec, tau - j) for j in range(spec.n_factors + 1))
            cond_wall = spec.Z[0] * tw[i] + sum(
                spec.Z[j] * _past_wall(spec, state, tau, j)[i] for j in range(1, spec.n_factors + 1)
            )
            rad = sum(spec.radiation[i, k] * (tw[k] - tw[i]) for k in range(nw))
            conv = w.conv_coeff * (tr - tw[i])
            terms = [cond_in, cond_wall, rad, conv]
            wall_res[i, tau] = (cond_in - cond_wall + rad + conv) / max(1.0, max(abs(x) for x in terms))
        vent, cap = _air_coeffs(spec, tau, dt, const)
        conv_air = sum(w.area * w.conv_coeff * (tw[k] - tr) for k, w in enumerate(spec.walls))
        vent_loss = vent * (tr - spec.outdoor_temp[tau])
        gain = spec.internal_gain[tau] + state.heat_input[tau]
        storage = cap * (tr - _past_room(spec, state, tau, 1))
        terms = [conv_air, vent_loss, gain, storage]
        air_res[tau] = (conv_air - vent_loss + gain - storage) / max(1.0, max(abs(x) for x in terms))
    return wall_res, air_res


@dataclass
class BuildingConstraints:
    """Linear form of the building model over ``z = [t_wall, t_room, heat_input]``.

    ``index`` maps ``"t_wall"`` to an (Nw, T) array of positions in ``z`` and
    ``"t_room"`` / ``"heat_input"`` to (T,) arrays.
    """

    A_eq: sp.csr_matrix
    b_eq: np.ndarray
    G: sp.csr_matrix
    h: np.ndarray
    lb: np.ndarray
    ub: np.ndarray
    index: dict[str, np.ndarray]

    @property
    def n_vars(self) -> int:
        return self.A_eq.shape[1]


def assemble_building_constraints(
    spec: BuildingSpec,
    periods: int,
    dt: float,
    const: Constants = Constants(),
    fixed_room: bool = False,
) -> BuildingConstraints:
    """Stack the per-period wall and air balances and the room comfort band.

    With ``fixed_room`` the room temperature is pinned to its lower bound.
    """
    nw, ns = spec.n_walls, spec.n_factors
    T = periods
    i_wall = np.arange(nw * T).reshape(nw, T)
    i_room = nw * T + np.arange(T)
    i_heat = (nw + 1) * T + np.arange(T)
    n = (nw + 2) * T
    rows, cols, vals, rhs = [], [], [], []
    r = 0
    sh = np.array([w.area * w.conv_coeff for w in spec.walls])
    for tau in range(T):
        for i, w in enumerate(spec.walls):
            const_part = sum(spec.Y[j] * _outdoor(spec, tau - j) for j in range(ns + 1))
            coeff_self = -(spec.Z[0] + spec.radiation[i].sum() - spec.radiation[i, i] + w.conv_coeff)
            entries = {i_wall[i, tau]: coeff_self, i_room[tau]: w.conv_coeff}
            for k in range(nw):
                if k != i and spec.radiation[i, k] != 0:
                    entries[i_wall[k, tau]] = spec.radiation[i, k]
            for j in range(1, ns + 1):
                if tau - j >= 0:
                    entries[i_wall[i, tau - j]] = entries.get(i_wall[i, tau - j], 0.0) - spec.Z[j]
                else:
                    const_part -= spec.Z[j] * spec.wall_history[i, ns + tau - j]
            for c_, v_ in entries.items():
                rows.append(r)
                cols.append(c_)
                vals.append(v_)
            rhs.append(-const_part)
            r += 1
        vent, cap = _air_coeffs(spec, tau, dt, const)
        entries = {i_room[tau]: -(sh.sum() + vent + cap), i_heat[tau]: 1.0}
        for k in range(nw):
            entries[i_wall[k, tau]] = sh[k]
        b = -vent * spec.outdoor_temp[tau] - spec.internal_gain[tau]
        if tau >= 1:
            entries[i_room[tau - 1]] = cap
        else:
            b -= cap * spec.room_history[-1]
        for c_, v_ in entries.items():
            rows.append(r)
            cols.append(c_)
            vals.append(v_)
        rhs.append(b)
        r += 1
    A = sp.csr_matrix((vals, (rows, cols)), shape=(r, n))

    hi = spec.t_room_min if fixed_room else spec.t_room_max
    G = sp.csr_matrix(
        (np.concatenate([np.ones(T), -np.ones(T)]), (np.arange(2 * T), np.concatenate([i_room, i_room]))),
        shape=(2 * T, n),
    )
    h = np.concatenate([hi[:T], -spec.t_room_min[:T]])
    lb = np.full(n, -np.inf)
    ub = np.full(n, np.inf)
    lb[i_heat] = 0.0
    return BuildingConstraints(A, np.asarray(rhs), G, h, lb, ub, {"t_wall": i_wall, "t_room": i_room, "heat_input": i_heat})
