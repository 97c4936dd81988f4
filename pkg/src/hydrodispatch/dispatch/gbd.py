"""Generalized Benders decomposition over the pipeline mass flows.

Each iteration fixes ``m``, computes the water-column weights (upper-level
problem), solves the dispatch QP in ``x`` (or, if that is infeasible, the
slack-minimising LP) and turns its multipliers into an affine cut over
``m``. The cut LP over the flow domain then proposes the next ``m``.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from ..network import DispatchInstance
from ..qp import OPTIMAL, INFEASIBLE, QpProblem, QpSolution, solve_lp, solve_qp
from .model import DispatchModel
from .solution import DispatchSolution

log = logging.getLogger(__name__)

__all__ = ["Cut", "TraceRow", "GbdState", "make_cut", "solve_ulp", "solve_llp", "gbd_solve", "LlpInfeasible", "build_solution"]

OPTIMALITY, FEASIBILITY = "optimality", "feasibility"


class LlpInfeasible(RuntimeError):
    """The accumulated cuts leave no admissible flow vector."""


@dataclass
class Cut:
    """Affine support ``constant + gradient . (m - m_point)`` over the flows.

    Optimality cuts bound the epigraph variable from below; feasibility cuts
    must be non-positive at admissible flows.
    """

    kind: str
    iteration: int
    m_point: np.ndarray
    constant: float
    gradient: np.ndarray
    multipliers: np.ndarray

    def value(self, m) -> float:
        return float(self.constant + self.gradient @ (np.asarray(m, dtype=float) - self.m_point))


@dataclass
class TraceRow:
    r: int
    ubd: float
    lbd: float
    gap: float
    sp_status: str
    wall_ms: float


@dataclass
class GbdState:
    iteration: int = 0
    optimality_cuts: list[Cut] = field(default_factory=list)
    feasibility_cuts: list[Cut] = field(default_factory=list)
    ubd: float = math.inf
    lbd: float = 0.0
    incumbent: tuple | None = None  # (x, m, eta)
    trace: list[TraceRow] = field(default_factory=list)
    status: str = "running"

    @property
    def converged(self) -> bool:
        return self.status == "converged"

    @property
    def gap(self) -> float:
        return _gap(self.ubd, self.lbd)

    @property
    def cuts(self) -> list[Cut]:
        return sorted(self.optimality_cuts + self.feasibility_cuts, key=lambda c: (c.iteration, c.kind))


def _gap(ubd: float, lbd: float) -> float:
    if not math.isfinite(ubd):
        return math.inf
    return (ubd - max(lbd, 0.0)) / max(abs(ubd), 1e-12)


def solve_ulp(model: DispatchModel, m: np.ndarray):
    """Weights of every pipe and period for flows ``m`` (unique, no search)."""
    m = np.asarray(m, dtype=float)
    if np.any(m < model.m_lb - 1e-9) or np.any(m > model.m_ub + 1e-9):
        raise ValueError("mass flows outside their bounds")
    return model.weights(m)


def make_cut(
    model: DispatchModel, kind: str, sol: QpSolution, m: np.ndarray, eta, iteration: int, n_static: int | None = None
) -> Cut:
    """Cut from a subproblem (optimality) or feasibility-problem solution.

    ``sol`` must come from :meth:`DispatchModel.subproblem` or
    :meth:`DispatchModel.feasibility_problem` at the same ``(m, eta)``.
    """
    if n_static is None:
        n_static = model.A_s.shape[0]
    x = sol.x[: model.n]
    mu = np.asarray(sol.y[n_static:], dtype=float)
    J = model.coupling_jacobian(x, m, eta)
    grad = J.T @ mu
    if kind == OPTIMALITY:
        const = model.cost_breakdown(x)["total"]
    elif kind == FEASIBILITY:
        g1 = model.coupling(m, eta).value(x)
        const = float(mu @ g1)
    else:
        raise ValueError(f"unknown cut kind {kind!r}")
    return Cut(kind, iteration, np.array(m, dtype=float), float(const), np.asarray(grad).ravel(), mu)


def solve_llp(model: DispatchModel, cuts: list[Cut], tol: float = 1e-9) -> tuple[np.ndarray, float, QpSolution]:
    """Cut LP ``min mu_B`` over the flow domain; returns (m, mu_B, raw solution).

    Without optimality cuts the epigraph variable is pinned at zero and the
    LP only looks for flows satisfying the feasibility cuts.
    """
    n_m = model.n_m
    opt = [c for c in cuts if c.kind == OPTIMALITY]
    # mu_B = offset + w keeps the epigraph variable of order one
    offset = min(c.constant for c in opt) if opt else 0.0
    rows, rhs = [], []
    for c in cuts:
        # const + g.(m - m0) <= mu_B  (optimality) or <= 0 (feasibility)
        scale = max(1.0, float(np.max(np.abs(c.gradient))))
        row = np.concatenate([c.gradient, [-1.0 if c.kind == OPTIMALITY else 0.0]]) / scale
        rows.append(row)
        shift = offset if c.kind == OPTIMALITY else 0.0
        rhs.append((c.gradient @ c.m_point - c.constant + shift) / scale)
    G = sp.csr_matrix(np.array(rows)) if rows else sp.csr_matrix((0, n_m + 1))
    A_m, b_m = model.flow_domain()
    A = sp.hstack([A_m, sp.csr_matrix((A_m.shape[0], 1))]).tocsr()
    q = np.zeros(n_m + 1)
    lb = np.concatenate([model.m_lb, [-np.inf]])
    ub = np.concatenate([model.m_ub, [np.inf]])
    if opt:
        q[-1] = 1.0
    else:
        lb[-1] = ub[-1] = 0.0
    prob = QpProblem(q=q, A=A, b=b_m, G=G, h=np.asarray(rhs, dtype=float), lb=lb, ub=ub)
    sol = solve_lp(prob, tol=tol, max_iter=200)
    if sol.status == INFEASIBLE:
        raise LlpInfeasible("cut LP over the flow domain is infeasible")
    if sol.status != OPTIMAL:
        raise RuntimeError(f"cut LP failed: {sol.status}")
    sol.x[-1] += offset
    m = np.clip(sol.x[:n_m], model.m_lb, model.m_ub)
    return m, float(sol.x[-1]), sol


def build_solution(model: DispatchModel, x, m, eta, method: str, status: str = "optimal") -> DispatchSolution:
    values = model.extract(x, m)
    return DispatchSolution(
        method=method,
        values=values,
        m=model.flows(m).copy(),
        weights=eta if eta is not None else [],
        cost=model.cost_breakdown(x),
        status=status,
        x=np.array(x, dtype=float),
    )


def _subproblem(model: DispatchModel, m, eta, tol):
    prob, _ = model.subproblem(m, eta)
    sol = solve_qp(prob, tol=tol, max_iter=150)
    return sol


def gbd_solve(
    inst: DispatchInstance,
    epsilon: float = 1e-4,
    max_iter: int = 100,
    m_init=None,
    pump_load: bool = False,
    model: DispatchModel | None = None,
    tol: float = 1e-9,
) -> tuple[DispatchSolution | None, GbdState]:
    """Iterate subproblem, cut and cut-LP steps until the relative gap is below ``epsilon``.

    ``m_init`` defaults to the flows of the steady-state baseline (the
    nominal schedule flows if that baseline is infeasible). The returned
    solution is the best feasible subproblem point; it is ``None`` only if
    no iteration produced one.
    """
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    if model is None:
        model = DispatchModel(inst, pump_load=pump_load)
    state = GbdState()
    if m_init is None:
        m = _default_start(inst, model, epsilon, max_iter)
    else:
        m = np.asarray(m_init, dtype=float).ravel().copy()
    m = np.clip(m, model.m_lb, model.m_ub)
    n_static = model.A_s.shape[0]

    for r in range(1, max_iter + 1):
        t0 = time.perf_counter()
        state.iteration = r
        eta = solve_ulp(model, m)
        sol = _subproblem(model, m, eta, tol)
        if sol.status == OPTIMAL:
            v = model.cost_breakdown(sol.x)["total"]
            if v < state.ubd:
                state.ubd = v
                state.incumbent = (sol.x.copy(), m.copy(), eta)
            state.optimality_cuts.append(make_cut(model, OPTIMALITY, sol, m, eta, r, n_static))
            sp_status = OPTIMAL
        else:
            fprob, _, _ = model.feasibility_problem(m, eta)
            fsol = solve_lp(fprob, tol=tol, max_iter=200)
            if fsol.status != OPTIMAL:
                state.status = "fp-failure"
                log.error("feasibility problem failed at iteration %d: %s", r, fsol.status)
                _trace(state, r, sol.status, t0)
                break
            cut = make_cut(model, FEASIBILITY, fsol, m, eta, r, n_static)
            if cut.constant <= 1e-9 * max(1.0, abs(fsol.objective)):
                # the subproblem failed numerically on a feasible point
                state.status = "sp-failure"
                log.error("subproblem %s at a feasible flow vector (iteration %d)", sol.status, r)
                _trace(state, r, sol.status, t0)
                break
            state.feasibility_cuts.append(cut)
            sp_status = sol.status
        if _gap(state.ubd, state.lbd) < epsilon:
            _trace(state, r, sp_status, t0)
            state.status = "converged"
            break
        try:
            m, mu_b, _ = solve_llp(model, state.cuts)
        except LlpInfeasible:
            state.status = "llp-infeasible"
            _trace(state, r, sp_status, t0)
            log.error("cut LP infeasible at iteration %d", r)
            break
        state.lbd = mu_b if state.optimality_cuts else 0.0
        _trace(state, r, sp_status, t0)
        log.info("gbd r=%d ubd=%.6f lbd=%.6f gap=%.3e %s", r, state.ubd, state.lbd, state.trace[-1].gap, sp_status)
        if state.trace[-1].gap < epsilon:
            state.status = "converged"
            break
    else:
        state.status = "max-iter"

    if state.incumbent is None:
        return None, state
    x, m_best, eta_best = state.incumbent
    status = "optimal" if state.converged else state.status
    sol = build_solution(model, x, m_best, eta_best, "gbd", status)
    sol.flags.update(pump_load=model.pump_load, iterations=state.iteration)
    return sol, state


def _default_start(inst, model, epsilon, max_iter) -> np.ndarray:
    nominal = model.nominal_flows()
    if model.steady:
        return nominal
    base = DispatchModel(inst, steady=True, fixed_room=True, pump_load=model.pump_load)
    sol, _ = gbd_solve(inst, epsilon=epsilon, max_iter=max_iter, m_init=nominal, model=base)
    return nominal if sol is None else sol.m.ravel().copy()


def _trace(state: GbdState, r: int, sp_status: str, t0: float) -> None:
    state.trace.append(
        TraceRow(r, state.ubd, state.lbd, _gap(state.ubd, state.lbd), sp_status, (time.perf_counter() - t0) * 1e3)
    )
