"""Local improvement of a dispatch solution over the mass flows.

The reduced cost ``v(m)`` (optimal subproblem cost at flows ``m`` with the
weights tied to ``m``) is decreased by projected gradient steps with an
Armijo backtracking line search. Its gradient comes from the subproblem
multipliers and the weight sensitivities, the same quantities the cuts use.
Only points whose subproblem solves to optimality are ever accepted, so
the result stays feasible and never costs more than the start.
"""

from __future__ import annotations

import logging

import numpy as np
import scipy.sparse as sp

from ..network import DispatchInstance
from ..qp import OPTIMAL, QpProblem, solve_qp
from .gbd import build_solution
from .model import DispatchModel
from .solution import DispatchSolution

log = logging.getLogger(__name__)

__all__ = ["refine_local", "FlowProjector"]


class FlowProjector:
    """Euclidean projection onto ``{m : A m = 0, lb <= m <= ub}``."""

    def __init__(self, model: DispatchModel):
        self.A, self.b = model.flow_domain()
        self.lb, self.ub = model.m_lb, model.m_ub
        self.n = model.n_m

    def __call__(self, y: np.ndarray) -> np.ndarray:
        prob = QpProblem(q=-y, P=sp.identity(self.n, format="csr"), A=self.A, b=self.b, lb=self.lb, ub=self.ub)
        sol = solve_qp(prob, tol=1e-11)
        if sol.status != OPTIMAL:
            raise RuntimeError(f"flow projection failed: {sol.status}")
        return np.clip(sol.x, self.lb, self.ub)


def _evaluate(model: DispatchModel, m: np.ndarray):
    eta = model.weights(m)
    prob, _ = model.subproblem(m, eta)
    sol = solve_qp(prob, tol=1e-10, max_iter=150)
    if sol.status != OPTIMAL:
        return None
    x = sol.x
    mu = sol.y[model.A_s.shape[0] :]
    grad = model.coupling_jacobian(x, m, eta).T @ mu
    return model.cost_breakdown(x)["total"], np.asarray(grad).ravel(), x, eta


def refine_local(
    inst: DispatchInstance,
    start: DispatchSolution,
    tol: float = 1e-6,
    max_iter: int = 25,
    pump_load: bool = False,
    model: DispatchModel | None = None,
) -> DispatchSolution:
    """Projected-gradient descent on the flows starting from ``start``.

    Stops when the projected-gradient step is below ``tol`` (relative to the
    flow range), when the step size underflows, or after ``max_iter``
    accepted steps. ``flags`` of the result records the stop reason; a
    ``warning`` flag means the start could not be evaluated and is returned
    unchanged.
    """
    if model is None:
        model = DispatchModel(inst, pump_load=pump_load)
    m = np.asarray(start.m, dtype=float).ravel().copy()
    base = _evaluate(model, m)
    if base is None:
        out = _copy(start)
        out.flags.update(warning="subproblem at the start flows did not solve", refine_iterations=0)
        return out
    v, g, x, eta = base
    best = (v, m, x, eta) if v <= start.objective else None
    project = FlowProjector(model)
    span = np.maximum(model.m_ub - model.m_lb, 1e-9)
    step = 0.25 * float(np.min(span)) / max(float(np.max(np.abs(g))), 1e-12)
    min_step = 1e-10 * step
    reason = "max-iter"
    it = 0
    stat = np.inf
    while it < max_iter:
        stat = float(np.max(np.abs(project(m - g) - m) / span))
        if stat <= tol:
            reason = "stationary"
            break
        accepted = False
        while step >= min_step:
            trial = project(m - step * g)
            d = trial - m
            if np.max(np.abs(d) / span) <= 1e-14:
                break
            res = _evaluate(model, trial)
            if res is not None and res[0] <= v + 1e-4 * float(g @ d):
                v, g, x, eta = res
                m = trial
                accepted = True
                step *= 2.0
                break
            step *= 0.5
        if not accepted:
            reason = "step-underflow"
            break
        it += 1
        log.info("refine it=%d cost=%.6f step=%.3g", it, v, step)
        if best is None or v < best[0]:
            best = (v, m.copy(), x, eta)

    if best is None or best[0] > start.objective:
        out = _copy(start)
        out.flags.update(refine_iterations=it, stop_reason=reason, stationarity=stat)
        return out
    v, m, x, eta = best
    out = build_solution(model, x, m, eta, "refined", start.status)
    out.flags.update(start.flags)
    out.flags.update(refine_iterations=it, stop_reason=reason, stationarity=stat, pump_load=pump_load)
    return out


def _copy(sol: DispatchSolution) -> DispatchSolution:
    return DispatchSolution(sol.method, dict(sol.values), sol.m.copy(), sol.weights, dict(sol.cost), sol.status, sol.x, dict(sol.flags))
