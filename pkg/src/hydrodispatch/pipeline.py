"""Transient outlet temperature of a single pipeline.

Two equivalent ways of locating the water that leaves a pipe during a period
are provided: the continuous water-mass weights (``fill_weights``,
``wmm_lossless``, ``wmm_outlet``) and the integer node method
(``nm_outlet``). ``steady_outlet`` is the no-storage limit and
``plugflow_oracle`` is a fine-grained Lagrangian reference used for testing.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .network import Constants, FlowHistory, PipelineSpec

__all__ = [
    "WindowTooShallow",
    "WaterColumnWeights",
    "NmState",
    "OutletResult",
    "fill_vector",
    "fill_weights",
    "weights_from_window",
    "wmm_lossless",
    "wmm_outlet",
    "nm_state",
    "nm_outlet",
    "steady_outlet",
    "steady_loss_factor",
    "plugflow_oracle",
]

# relative slack when comparing cumulative mass against the pipe content
FILL_RTOL = 1e-12


class WindowTooShallow(ValueError):
    """The flow window cannot fill the pipe; history depth is too small."""


@dataclass(frozen=True)
class WaterColumnWeights:
    """Shares of past inflow parcels inside the pipe.

    ``alpha[k]`` weights the parcel that entered ``k`` periods ago in the
    water filling the pipe at the end of the period; ``beta`` additionally
    includes the water that left during the period, with ``beta[0] = 1``.
    """

    alpha: np.ndarray
    beta: np.ndarray

    @property
    def exit_weights(self) -> np.ndarray:
        return self.beta - self.alpha

    def front(self) -> tuple[int, int]:
        """Index of the last nonzero entry of alpha and beta."""
        return int(np.flatnonzero(self.alpha)[-1]), int(np.flatnonzero(self.beta)[-1])


@dataclass(frozen=True)
class NmState:
    gamma: int
    phi: int
    R: float
    S: float
    K: np.ndarray  # K[k] multiplies t_s[tau-k], k = 0..N_b


@dataclass(frozen=True)
class OutletResult:
    t_lossless: float
    t_out: float
    transit_estimate: float  # seconds


def fill_vector(masses: np.ndarray, content: float) -> np.ndarray:
    """Greedy front fill: ones until ``content`` is reached, then a fraction.

    ``masses[k]`` is the inflow mass of the parcel ``k`` places back. When the
    cumulative mass meets ``content`` exactly, the next entry is left at zero.
    """
    w = np.zeros(len(masses))
    remaining = content
    tol = FILL_RTOL * content
    for k, mk in enumerate(masses):
        if remaining <= tol:
            break
        if mk >= remaining - tol:
            w[k] = min(1.0, remaining / mk)
            remaining = 0.0
            break
        w[k] = 1.0
        remaining -= mk
    if remaining > tol:
        raise WindowTooShallow(
            f"window holds {content - remaining:.6g} kg of the {content:.6g} kg needed to fill the pipe"
        )
    return w


def weights_from_window(m_window: np.ndarray, dt: float, content: float) -> WaterColumnWeights:
    """Weights for a flow window ``m_window[k] = m[tau-k]``, ``k = 0..N_b``."""
    m_window = np.asarray(m_window, dtype=float)
    if np.any(m_window <= 0):
        raise ValueError("flows in the window must be positive")
    masses = m_window * dt
    alpha = fill_vector(masses, content)
    beta = np.zeros_like(alpha)
    beta[0] = 1.0
    beta[1:] = fill_vector(masses[1:], content)
    return WaterColumnWeights(alpha, beta)


def fill_weights(
    pipe: PipelineSpec, flows: FlowHistory, tau: int, dt: float, constants: Constants = Constants()
) -> WaterColumnWeights:
    m_win, _ = flows.window(tau, pipe.history_depth)
    return weights_from_window(m_win, dt, pipe.water_mass(constants.rho))


def wmm_lossless(pipe: PipelineSpec, flows: FlowHistory, weights: WaterColumnWeights, tau: int) -> float:
    m_win, t_win = flows.window(tau, len(weights.alpha) - 1)
    if m_win[0] <= 0:
        raise ZeroDivisionError("mass flow in the current period is zero")
    return float(np.dot(weights.exit_weights * m_win, t_win) / m_win[0])


def _loss_exponent(pipe: PipelineSpec, dt: float, constants: Constants) -> float:
    return pipe.heat_transfer_coeff * dt / (pipe.area * constants.rho * constants.c)


def wmm_outlet(
    pipe: PipelineSpec, flows: FlowHistory, tau: int, dt: float, constants: Constants = Constants()
) -> OutletResult:
    w = fill_weights(pipe, flows, tau, dt, constants)
    t_lossless = wmm_lossless(pipe, flows, w, tau)
    periods = 0.5 * (w.alpha.sum() + w.beta[1:].sum())
    t_am = pipe.ambient_temp[tau] if 0 <= tau < len(pipe.ambient_temp) else pipe.ambient_temp[-1]
    factor = math.exp(-_loss_exponent(pipe, dt, constants) * periods)
    return OutletResult(t_lossless, float(t_am + (t_lossless - t_am) * factor), float(periods * dt))


def nm_state(m_window: np.ndarray, dt: float, content: float) -> NmState:
    """Node-method indices and coefficients for ``m_window[k] = m[tau-k]``."""
    m_window = np.asarray(m_window, dtype=float)
    if np.any(m_window <= 0):
        raise ValueError("flows in the window must be positive")
    masses = m_window * dt
    n = len(masses) - 1
    cum = np.cumsum(masses)
    tol = FILL_RTOL * content
    hits = np.flatnonzero(cum >= content - tol)
    if len(hits) == 0:
        raise WindowTooShallow("window cannot fill the pipe (gamma)")
    gamma = int(hits[0])
    cum1 = np.cumsum(masses[1:])
    hits = np.flatnonzero(cum1 >= content - tol)
    if len(hits) == 0:
        raise WindowTooShallow("window cannot fill the pipe (phi)")
    phi = int(hits[0]) + 1
    R = float(cum[gamma])
    S = float(cum[phi - 1]) if phi >= gamma + 1 else R
    cur = masses[0]
    K = np.zeros(n + 1)
    K[phi] += (cur + content - S) / cur
    for k in range(gamma + 1, phi):
        K[k] += m_window[k] / m_window[0]
    K[gamma] += (R - content) / cur
    return NmState(gamma, phi, R, S, K)


def nm_outlet(
    pipe: PipelineSpec, flows: FlowHistory, tau: int, dt: float, constants: Constants = Constants()
) -> tuple[OutletResult, NmState]:
    m_win, t_win = flows.window(tau, pipe.history_depth)
    st = nm_state(m_win, dt, pipe.water_mass(constants.rho))
    t_lossless = float(np.dot(st.K, t_win))
    periods = st.gamma + 0.5 + (st.S - st.R) / (m_win[st.gamma] * dt)
    t_am = pipe.ambient_temp[tau] if 0 <= tau < len(pipe.ambient_temp) else pipe.ambient_temp[-1]
    factor = math.exp(-_loss_exponent(pipe, dt, constants) * periods)
    return OutletResult(t_lossless, float(t_am + (t_lossless - t_am) * factor), float(periods * dt)), st


def steady_loss_factor(pipe: PipelineSpec, m: float, constants: Constants = Constants()) -> float:
    """Fraction of the inlet excess temperature left at the outlet under steady flow.

    The residence time is rho*A*L/m, so the exponent reduces to lambda*L/(c*m).
    """
    if not m > 0:
        raise ValueError("mass flow must be positive")
    return math.exp(-pipe.heat_transfer_coeff * pipe.length / (constants.c * m))


def steady_outlet(
    pipe: PipelineSpec, m: float, t_in: float, t_am: float, constants: Constants = Constants()
) -> float:
    return t_am + (t_in - t_am) * steady_loss_factor(pipe, m, constants)


def plugflow_oracle(
    pipe: PipelineSpec,
    flows: np.ndarray,
    inlet_temps: np.ndarray,
    dt: float,
    substeps: int = 10_000,
    constants: Constants = Constants(),
    ambient: np.ndarray | float | None = None,
    first: int | None = None,
) -> np.ndarray:
    """Outlet temperature per period from a Lagrangian parcel simulation.

    ``flows`` and ``inlet_temps`` cover the whole simulated span (history
    included) and are held constant within each period. The pipe starts full
    of water that entered at the first inlet temperature; periods whose
    outflow reaches back into that initial fill are returned as NaN. Each
    period is cut into ``substeps`` exit slices; every slice tracks the parcel
    that leaves at its midpoint back to its entry time and decays it towards
    ambient for the elapsed residence time.
    """
    if substeps < 100:
        raise ValueError("substeps must be at least 100")
    flows = np.asarray(flows, dtype=float)
    inlet_temps = np.asarray(inlet_temps, dtype=float)
    if flows.shape != inlet_temps.shape or np.any(flows <= 0):
        raise ValueError("flows must be positive and match inlet_temps")
    n = len(flows)
    if ambient is None:
        ambient = pipe.ambient_temp[0]
    t_am = np.broadcast_to(np.asarray(ambient, dtype=float), (n,))
    content = pipe.water_mass(constants.rho)
    rate = pipe.heat_transfer_coeff / (pipe.area * constants.rho * constants.c)

    # cumulative inflow mass at period boundaries
    vol = np.concatenate([[0.0], np.cumsum(flows * dt)])
    out = np.full(n, np.nan)
    frac = (np.arange(substeps) + 0.5) / substeps
    for p in range(0 if first is None else first, n):
        t_exit = (p + frac) * dt
        v_exit = vol[p] + flows[p] * frac * dt - content
        if v_exit[0] < 0:
            continue
        q = np.searchsorted(vol, v_exit, side="right") - 1
        t_entry = (q + (v_exit - vol[q]) / (flows[q] * dt)) * dt
        resid = t_exit - t_entry
        temps = t_am[p] + (inlet_temps[q] - t_am[p]) * np.exp(-rate * resid)
        out[p] = temps.mean()
    return out
