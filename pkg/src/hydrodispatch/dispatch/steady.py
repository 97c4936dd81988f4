"""Steady-state baseline: no pipe storage, room temperature pinned at its floor."""

from __future__ import annotations

import logging

from ..network import DispatchInstance
from .gbd import gbd_solve
from .model import DispatchModel
from .solution import DispatchSolution

log = logging.getLogger(__name__)

__all__ = ["solve_steady", "SteadyFailure"]


class SteadyFailure(RuntimeError):
    pass


def solve_steady(
    inst: DispatchInstance, epsilon: float = 1e-4, max_iter: int = 100, pump_load: bool = False
) -> DispatchSolution:
    """Dispatch with the no-storage pipe outlet relation.

    Outlets follow ``t_am + (t_in - t_am) exp(-lambda L / (c m))`` and every
    room sits at its lower temperature bound. The loss factor is evaluated
    exactly at each candidate flow vector of the outer flow iteration, so the
    returned point is a fixed point of the loss-factor substitution.
    """
    model = DispatchModel(inst, steady=True, fixed_room=True, pump_load=pump_load)
    sol, state = gbd_solve(inst, epsilon=epsilon, max_iter=max_iter, m_init=model.nominal_flows(), model=model)
    if sol is None:
        raise SteadyFailure(f"steady model has no feasible flow vector ({state.status})")
    sol.method = "steady"
    sol.weights = []
    sol.flags.update(pump_load=pump_load, iterations=state.iteration, gbd_status=state.status)
    if state.status != "converged":
        log.warning("steady flow iteration stopped with status %s", state.status)
    return sol

