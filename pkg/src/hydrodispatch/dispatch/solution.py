"""Dispatch results and their JSON/CSV exports."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..network import DispatchInstance
from ..pipeline import WaterColumnWeights

__all__ = ["DispatchSolution", "solution_to_dict", "write_solution_json", "write_solution_csvs", "write_convergence_csv"]


@dataclass
class DispatchSolution:
    """Optimised operating point.

    ``values`` holds named arrays in instance units (MW, degC, Pa, W per
    room); ``m`` is (pipes, T) in kg/s and ``weights[b][t]`` the water-column
    weights used for pipe ``b`` in period ``t`` (empty for the steady model).
    """

    method: str
    values: dict
    m: np.ndarray
    weights: list[list[WaterColumnWeights]]
    cost: dict[str, float]
    status: str = "optimal"
    x: np.ndarray | None = None
    flags: dict = field(default_factory=dict)

    @property
    def objective(self) -> float:
        return self.cost["total"]

    @property
    def curtailment(self) -> np.ndarray:
        """Total curtailed renewable power per period, MW."""
        c = np.asarray(self.values["curtailment"])
        return c.sum(axis=0) if c.size else np.zeros(self.m.shape[1])

    @property
    def total_curtailment(self) -> float:
        return float(np.maximum(self.curtailment, 0.0).sum())

    def heat_output(self, inst: DispatchInstance) -> np.ndarray:
        q = np.asarray(self.values["q_chp"])
        return q.sum(axis=0) if q.size else np.zeros(inst.horizon.periods)

    def heat_load(self, inst: DispatchInstance) -> np.ndarray:
        """Total building heat input per period, MW."""
        total = np.zeros(inst.horizon.periods)
        for b, heat in zip(inst.buildings, self.values["heat_input"]):
            total += b.room_count * np.asarray(heat) / 1e6
        return total


def _lst(a):
    return np.asarray(a, dtype=float).tolist()


def solution_to_dict(inst: DispatchInstance, sol: DispatchSolution, trace=None) -> dict:
    v = sol.values
    doc = {
        "method": sol.method,
        "status": sol.status,
        "objective": {k: sol.cost[k] for k in ("total", "chp", "thermal", "penalty")},
        "per_period": {
            "p_i": {u.id: _lst(v["p_chp"][i]) for i, u in enumerate(inst.chp)}
            | {u.id: _lst(v["p_th"][i]) for i, u in enumerate(inst.thermal)},
            "q_i": {u.id: _lst(v["q_chp"][i]) for i, u in enumerate(inst.chp)},
            "p_re": {u.id: _lst(v["p_re"][i]) for i, u in enumerate(inst.renewable)},
            "curtailment": {u.id: _lst(v["curtailment"][i]) for i, u in enumerate(inst.renewable)},
            "reserves": {
                u.id: {"up": _lst(v["ru"][i]), "down": _lst(v["rd"][i])} for i, u in enumerate(inst.thermal)
            },
        },
        "dhs": {
            "m_b": {p.id: _lst(sol.m[b]) for b, p in enumerate(inst.pipelines)},
            "t_n": {n.id: _lst(v["t_n"][j]) for j, n in enumerate(inst.nodes)},
            "h_n": {n.id: _lst(v["h_n"][j]) for j, n in enumerate(inst.nodes)},
            "weights": {
                p.id: [{"alpha": _lst(w.alpha), "beta": _lst(w.beta)} for w in sol.weights[b]]
                for b, p in enumerate(inst.pipelines)
            }
            if sol.weights
            else {},
            "t_room": {bs.id: _lst(v["t_room"][k]) for k, bs in enumerate(inst.buildings)},
            "heat_input_w": {bs.id: _lst(v["heat_input"][k]) for k, bs in enumerate(inst.buildings)},
        },
        "trace": {"r": [], "ubd": [], "lbd": [], "sp_status": [], "wall_ms": []},
    }
    if trace:
        for row in trace:
            doc["trace"]["r"].append(row.r)
            doc["trace"]["ubd"].append(row.ubd)
            doc["trace"]["lbd"].append(row.lbd)
            doc["trace"]["sp_status"].append(row.sp_status)
            doc["trace"]["wall_ms"].append(row.wall_ms)
    return doc


def write_solution_json(path, inst: DispatchInstance, sol: DispatchSolution, trace=None) -> None:
    doc = solution_to_dict(inst, sol, trace)
    Path(path).write_text(json.dumps(doc, indent=1, allow_nan=True) + "\n")


def write_solution_csvs(outdir, inst: DispatchInstance, solutions: dict[str, DispatchSolution]) -> list[Path]:
    """Plot-ready CSVs for one or more labelled solutions (e.g. steady, dynamic)."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    T = inst.horizon.periods
    paths = []
    p = outdir / "heat_output_vs_load.csv"
    with p.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["method", "period", "heat_output_mw", "heat_load_mw"])
        for label, sol in solutions.items():
            out, load = sol.heat_output(inst), sol.heat_load(inst)
            for t in range(T):
                w.writerow([label, inst.horizon.label(t), f"{out[t]:.6f}", f"{load[t]:.6f}"])
    paths.append(p)
    p = outdir / "wind_dispatch.csv"
    with p.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["method", "period", "available_mw", "dispatched_mw", "curtailment_mw"])
        avail = np.sum([u.available for u in inst.renewable], axis=0) if inst.renewable else np.zeros(T)
        for label, sol in solutions.items():
            disp = np.asarray(sol.values["p_re"]).sum(axis=0) if inst.renewable else np.zeros(T)
            for t in range(T):
                w.writerow([label, inst.horizon.label(t), f"{avail[t]:.6f}", f"{disp[t]:.6f}", f"{avail[t] - disp[t]:.6f}"])
    paths.append(p)
    return paths


def write_convergence_csv(path, trace) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["r", "ubd", "lbd", "gap", "sp_status", "wall_ms"])
        for row in trace:
            w.writerow([row.r, f"{row.ubd:.6f}", f"{row.lbd:.6f}", f"{row.gap:.6e}", row.sp_status, f"{row.wall_ms:.1f}"])
