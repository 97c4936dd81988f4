"""Scenario sweeps: scaled wind availability ``u`` and outdoor temperature ``v``."""

from __future__ import annotations

import csv
import dataclasses
import itertools
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..network import DispatchInstance
from .gbd import gbd_solve
from .refine import refine_local

log = logging.getLogger(__name__)

__all__ = [
    "ScenarioResult",
    "scale_instance",
    "grid_scenarios",
    "montecarlo_scenarios",
    "run_scenarios",
    "write_scenarios_csv",
    "write_aggregate_csv",
    "SCENARIO_HEADER",
]

SCENARIO_HEADER = ["scenario", "u", "v", "converged", "iterations", "wall_ms", "cost", "curtailment"]


@dataclass
class ScenarioResult:
    scenario: int
    u: float
    v: float
    converged: bool
    iterations: int
    wall_ms: float
    cost: float
    curtailment: float
    error: str = ""


def scale_instance(inst: DispatchInstance, u: float, v: float) -> DispatchInstance:
    """Copy of ``inst`` with wind availability times ``u`` and outdoor temperature times ``v``."""
    ren = tuple(dataclasses.replace(r, available=np.asarray(r.available) * u) for r in inst.renewable)
    blds = tuple(dataclasses.replace(b, outdoor_temp=np.asarray(b.outdoor_temp) * v) for b in inst.buildings)
    return dataclasses.replace(inst, renewable=ren, buildings=blds)


def grid_scenarios(u_list=(1.0,), v_list=(1.0,)) -> list[tuple[float, float]]:
    """Cartesian product of the ``u`` and ``v`` values, ``u`` varying slowest."""
    return [(float(u), float(v)) for u, v in itertools.product(u_list, v_list)]


def montecarlo_scenarios(count: int, seed: int, sd: float = 0.1, lo: float = 0.5, hi: float = 1.5) -> list[tuple[float, float]]:
    """``count`` wind scalings from N(1, sd^2) truncated to [lo, hi] by redrawing; ``v`` stays 1."""
    rng = np.random.default_rng(seed)
    out = []
    while len(out) < count:
        u = float(rng.normal(1.0, sd))
        if lo <= u <= hi:
            out.append((u, 1.0))
    return out


def _run_one(args) -> ScenarioResult:
    k, inst, u, v, opts = args
    t0 = time.perf_counter()
    try:
        scaled = scale_instance(inst, u, v)
        sol, state = gbd_solve(
            scaled, epsilon=opts["epsilon"], max_iter=opts["max_iter"], pump_load=opts["pump_load"]
        )
        if sol is None:
            raise RuntimeError(f"no feasible point ({state.status})")
        if opts["refine"]:
            sol = refine_local(scaled, sol, pump_load=opts["pump_load"])
        return ScenarioResult(
            k, u, v, state.converged, state.iteration, (time.perf_counter() - t0) * 1e3, sol.objective, sol.total_curtailment
        )
    except Exception as exc:  # recorded per scenario, the sweep goes on
        log.warning("scenario %d (u=%g, v=%g) failed: %s", k, u, v, exc)
        return ScenarioResult(k, u, v, False, 0, (time.perf_counter() - t0) * 1e3, math.nan, math.nan, str(exc))


def run_scenarios(
    inst: DispatchInstance,
    scenarios: list[tuple[float, float]],
    *,
    epsilon: float = 1e-4,
    max_iter: int = 100,
    refine: bool = False,
    pump_load: bool = False,
    jobs: int = 1,
) -> list[ScenarioResult]:
    """Solve every ``(u, v)`` scenario; results come back in scenario order."""
    opts = {"epsilon": epsilon, "max_iter": max_iter, "refine": refine, "pump_load": pump_load}
    tasks = [(k, inst, u, v, opts) for k, (u, v) in enumerate(scenarios)]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(_run_one, tasks))
    return [_run_one(t) for t in tasks]


def write_scenarios_csv(path, results: list[ScenarioResult]) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(SCENARIO_HEADER)
        for r in results:
            w.writerow(
                [r.scenario, f"{r.u:.6f}", f"{r.v:.6f}", int(r.converged), r.iterations, f"{r.wall_ms:.1f}", f"{r.cost:.4f}", f"{r.curtailment:.4f}"]
            )


def write_aggregate_csv(path, results: list[ScenarioResult]) -> None:
    """Timing-free summary, identical across reruns with the same seed."""
    ok = [r for r in results if r.converged]
    costs = np.array([r.cost for r in ok]) if ok else np.array([np.nan])
    curt = np.array([r.curtailment for r in ok]) if ok else np.array([np.nan])
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["scenarios", "converged", "mean_iterations", "mean_cost", "min_cost", "max_cost", "mean_curtailment"])
        w.writerow(
            [
                len(results),
                len(ok),
                f"{np.mean([r.iterations for r in results]):.3f}" if results else "nan",
                f"{costs.mean():.4f}",
                f"{costs.min():.4f}",
                f"{costs.max():.4f}",
                f"{curt.mean():.4f}",
            ]
        )
