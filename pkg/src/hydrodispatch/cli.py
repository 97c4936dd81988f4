"""Command-line front end.

Human-readable summaries go to stdout (or a JSON summary with ``--json``);
machine outputs are written as files under ``--out``. Exit codes: 0 on
success, 2 on invalid input, 3 when a simulation or solve fails.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys
from pathlib import Path

import numpy as np

from .building import required_heat
from .hydraulics import propagate_network, solve_pressures
from .network import FlowHistory, InstanceError, load_instance
from .pipeline import nm_outlet, steady_outlet, wmm_outlet

log = logging.getLogger("hydrodispatch")

EXIT_OK, EXIT_INPUT, EXIT_SOLVE = 0, 2, 3

PIPE_HEADER = [
    "period",
    "mass_flow_kg_s",
    "t_in_c",
    "t_out_wmm_c",
    "t_out_nm_c",
    "t_out_steady_c",
    "transit_wmm_s",
    "transit_nm_s",
]
NETWORK_HEADER = ["period", "node_id", "t_n_c", "h_n"]
BUILDING_HEADER = ["period", "t_out_c", "t_room_c", "heat_input_w"]
COMPARE_HEADER = ["method", "total_cost", "chp_cost", "thermal_cost", "penalty", "curtailment_mwh", "status"]


class InputError(Exception):
    pass


class SolveError(Exception):
    pass


def _fmt(v) -> str:
    return "" if v is None or (isinstance(v, float) and math.isnan(v)) else f"{v:.6f}"


def _emit(args, text: str, summary: dict) -> None:
    if args.json:
        print(json.dumps(summary, indent=1, allow_nan=True))
    else:
        print(text)


def _outdir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load(args):
    path = Path(args.instance)
    if not path.exists():
        raise InputError(f"instance file not found: {path}")
    try:
        return load_instance(path)
    except InstanceError as exc:
        raise InputError(f"invalid instance: {exc}") from exc


# ---------------------------------------------------------------------------
# simulation commands
# ---------------------------------------------------------------------------


def cmd_simulate_pipe(args) -> int:
    inst = _load(args)
    if args.pipe is None:
        pipe = inst.pipelines[0]
    else:
        try:
            pipe = inst.pipe(args.pipe)
        except KeyError:
            raise InputError(f"no pipeline {args.pipe!r} in the instance") from None
    sched = pipe.schedule
    if sched is None or sched.inlet_temp is None:
        raise InputError(f"pipeline {pipe.id} needs a flow and inlet temperature schedule")
    methods = {"wmm", "nm", "steady"} if args.method == "all" else {args.method}
    hist = FlowHistory.from_pipe(pipe)
    T = inst.horizon.periods
    dt = inst.horizon.dt
    const = inst.constants
    rows = []
    try:
        for tau in range(T):
            m, t_in = sched.mass_flow[tau], sched.inlet_temp[tau]
            w = nm = st = None
            if "wmm" in methods:
                w = wmm_outlet(pipe, hist, tau, dt, const)
            if "nm" in methods:
                nm, _ = nm_outlet(pipe, hist, tau, dt, const)
            if "steady" in methods:
                st = steady_outlet(pipe, m, t_in, pipe.ambient_temp[tau], const)
            rows.append(
                [
                    inst.horizon.label(tau),
                    m,
                    t_in,
                    w.t_out if w else None,
                    nm.t_out if nm else None,
                    st,
                    w.transit_estimate if w else None,
                    nm.transit_estimate if nm else None,
                ]
            )
    except ValueError as exc:
        raise SolveError(f"pipe simulation failed: {exc}") from exc

    path = _outdir(args) / f"pipe_{pipe.id}.csv"
    with path.open("w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(PIPE_HEADER)
        for r in rows:
            wr.writerow([r[0]] + [_fmt(v) for v in r[1:]])
    lines = [f"pipeline {pipe.id}: {T} period(s) -> {path}"]
    for r in rows[:24]:
        outs = ", ".join(f"{k} {v:.3f} C" for k, v in zip(("wmm", "nm", "steady"), r[3:6]) if v is not None)
        lines.append(f"  period {r[0]}: m={r[1]:.2f} kg/s  t_in={r[2]:.2f} C  {outs}")
    _emit(args, "\n".join(lines), {"pipeline": pipe.id, "csv": str(path), "rows": [dict(zip(PIPE_HEADER, r)) for r in rows]})
    return EXIT_OK


def cmd_simulate_network(args) -> int:
    inst = _load(args)
    T = inst.horizon.periods
    # load nodes without a schedule draw their buildings' demand at the comfort floor
    demand = {bs.id: required_heat(bs, bs.t_room_min, inst.horizon.dt, inst.constants) for bs in inst.buildings}
    heat = np.zeros((len(inst.nodes), T))
    for j, nd in enumerate(inst.nodes):
        if nd.heat_schedule is not None:
            heat[j] = nd.heat_schedule
        else:
            for bs in inst.buildings:
                if bs.dhs_node == nd.id:
                    heat[j] -= demand[bs.id].heat_input * bs.room_count / 1e6
    try:
        res = propagate_network(inst, heat=heat)
    except ValueError as exc:
        raise SolveError(f"network simulation failed: {exc}") from exc
    flows = np.array([p.schedule.mass_flow for p in inst.pipelines])
    heads = np.array(
        [
            p.schedule.pump_head if p.schedule.pump_head is not None else np.zeros(T)
            for p in inst.pipelines
        ]
    )
    src = next((n for n in inst.nodes if n.role == "source"), inst.nodes[0])
    ref = src.return_node or src.id
    ref_value = inst.node(ref).h_min
    out = _outdir(args)
    path = out / "network.csv"
    with path.open("w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(NETWORK_HEADER)
        for tau in range(T):
            h = solve_pressures(inst, flows[:, tau], heads[:, tau], ref, ref_value)
            for j, nd in enumerate(inst.nodes):
                wr.writerow([inst.horizon.label(tau), nd.id, _fmt(res.node_temp[j, tau]), _fmt(h[j])])
    written = [path]
    for bs in inst.buildings:
        st = demand[bs.id]
        bp = out / f"building_{bs.id}.csv"
        with bp.open("w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(BUILDING_HEADER)
            for tau in range(T):
                wr.writerow([inst.horizon.label(tau), _fmt(bs.outdoor_temp[tau]), _fmt(st.t_room[tau]), _fmt(st.heat_input[tau])])
        written.append(bp)
    text = [f"network {inst.name or args.instance}: {len(inst.nodes)} nodes, {T} periods"]
    for j, nd in enumerate(inst.nodes):
        text.append(f"  {nd.id:<8} t_n min {res.node_temp[j].min():7.2f}  max {res.node_temp[j].max():7.2f} C")
    text.append("wrote " + ", ".join(str(p) for p in written))
    _emit(args, "\n".join(text), {"files": [str(p) for p in written]})
    return EXIT_OK


# ---------------------------------------------------------------------------
# dispatch commands
# ---------------------------------------------------------------------------


def _summary(sol) -> dict:
    return {
        "method": sol.method,
        "status": sol.status,
        "cost": sol.cost,
        "curtailment_mwh": sol.total_curtailment,
        "flags": {k: v for k, v in sol.flags.items() if isinstance(v, (int, float, str, bool))},
    }


def _solve_dynamic(inst, args):
    from .dispatch import gbd_solve, refine_local

    sol, state = gbd_solve(inst, epsilon=args.epsilon, max_iter=args.max_iter, pump_load=args.pump_load)
    if sol is None:
        raise SolveError(f"decomposition found no feasible point (status {state.status})")
    if args.refine:
        sol = refine_local(inst, sol, pump_load=args.pump_load)
    return sol, state


def _solve_steady(inst, args):
    from .dispatch import SteadyFailure, solve_steady

    try:
        return solve_steady(inst, epsilon=args.epsilon, max_iter=args.max_iter, pump_load=args.pump_load)
    except SteadyFailure as exc:
        raise SolveError(str(exc)) from exc


def cmd_dispatch(args) -> int:
    from .dispatch import check_feasibility, write_convergence_csv, write_solution_csvs, write_solution_json

    inst = _load(args)
    if args.method == "nm":
        raise InputError("dispatch supports --method wmm or steady")
    out = _outdir(args)
    if args.method == "steady":
        sol, trace = _solve_steady(inst, args), []
    else:
        sol, state = _solve_dynamic(inst, args)
        trace = state.trace
    write_solution_json(out / "solution.json", inst, sol, trace)
    write_convergence_csv(out / "convergence.csv", trace)
    write_solution_csvs(out, inst, {sol.method: sol})
    rep = check_feasibility(inst, sol, 1e-4)
    summary = _summary(sol) | {"iterations": len(trace), "feasible": rep.ok, "max_residual": rep.worst}
    text = (
        f"{sol.method} dispatch ({sol.status}) after {len(trace)} iteration(s)\n"
        f"  total cost   {sol.cost['total']:14.2f}\n"
        f"  chp          {sol.cost['chp']:14.2f}\n"
        f"  thermal      {sol.cost['thermal']:14.2f}\n"
        f"  wind penalty {sol.cost['penalty']:14.2f}\n"
        f"  curtailment  {sol.total_curtailment:14.3f} MWh\n"
        f"  check        {'ok' if rep.ok else 'VIOLATED'} (max residual {rep.worst:.2e})\n"
        f"outputs in {out}"
    )
    _emit(args, text, summary)
    return EXIT_OK


def cmd_steady(args) -> int:
    args.method = "steady"
    return cmd_dispatch(args)


def cmd_compare(args) -> int:
    from .dispatch import write_convergence_csv, write_solution_csvs, write_solution_json

    inst = _load(args)
    out = _outdir(args)
    steady = _solve_steady(inst, args)
    dyn, state = _solve_dynamic(inst, args)
    write_solution_json(out / "solution_steady.json", inst, steady)
    write_solution_json(out / "solution_dynamic.json", inst, dyn, state.trace)
    write_convergence_csv(out / "convergence.csv", state.trace)
    write_solution_csvs(out, inst, {"steady": steady, "dynamic": dyn})
    with (out / "comparison.csv").open("w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(COMPARE_HEADER)
        for label, s in (("steady", steady), ("dynamic", dyn)):
            c = s.cost
            wr.writerow([label, _fmt(c["total"]), _fmt(c["chp"]), _fmt(c["thermal"]), _fmt(c["penalty"]), _fmt(s.total_curtailment), s.status])
    lines = [f"{'':<14}{'steady':>14}{'dynamic':>14}"]
    for key in ("total", "chp", "thermal", "penalty"):
        lines.append(f"{key + ' cost':<14}{steady.cost[key]:>14.2f}{dyn.cost[key]:>14.2f}")
    lines.append(f"{'curtailment':<14}{steady.total_curtailment:>14.3f}{dyn.total_curtailment:>14.3f}")
    saving = steady.objective - dyn.objective
    lines.append(f"dynamic model saves {saving:.2f} ({saving / steady.objective:.2%}); outputs in {out}")
    _emit(args, "\n".join(lines), {"steady": _summary(steady), "dynamic": _summary(dyn)})
    return EXIT_OK


def _parse_grid(text: str) -> tuple[list[float], list[float]]:
    u, v = [1.0], [1.0]
    for part in text.replace(" ", "").split(";"):
        if not part:
            continue
        key, _, vals = part.partition("=")
        try:
            nums = [float(x) for x in vals.split(",") if x]
        except ValueError:
            raise InputError(f"bad --grid entry {part!r}") from None
        if key not in ("u", "v") or not nums:
            raise InputError(f"bad --grid entry {part!r}; expected u=... or v=...")
        if key == "u":
            u = nums
        else:
            v = nums
    return u, v


def cmd_scenarios(args) -> int:
    from .dispatch.scenarios import grid_scenarios, montecarlo_scenarios, run_scenarios, write_aggregate_csv, write_scenarios_csv

    inst = _load(args)
    if args.montecarlo is not None:
        if args.montecarlo <= 0:
            raise InputError("--montecarlo needs a positive count")
        scen = montecarlo_scenarios(args.montecarlo, args.seed)
    else:
        scen = grid_scenarios(*_parse_grid(args.grid or "u=1"))
    out = _outdir(args)
    results = run_scenarios(
        inst, scen, epsilon=args.epsilon, max_iter=args.max_iter, refine=args.refine, pump_load=args.pump_load, jobs=args.jobs
    )
    write_scenarios_csv(out / "scenarios.csv", results)
    write_aggregate_csv(out / "scenarios_aggregate.csv", results)
    n_ok = sum(r.converged for r in results)
    lines = [f"{n_ok}/{len(results)} scenarios converged; outputs in {out}"]
    for r in results:
        lines.append(
            f"  #{r.scenario:<3} u={r.u:.4f} v={r.v:.4f} {'ok ' if r.converged else 'FAIL'} it={r.iterations:<3} cost={r.cost:.2f} curt={r.curtailment:.3f}"
        )
    _emit(args, "\n".join(lines), {"scenarios": len(results), "converged": n_ok})
    return EXIT_SOLVE if results and n_ok == 0 else EXIT_OK


# ---------------------------------------------------------------------------


def _positive(text: str) -> float:
    v = float(text)
    if not v > 0:
        raise argparse.ArgumentTypeError("must be positive")
    return v


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="hydrodispatch", description="Heat-and-power dispatch with transient pipeline thermal models.")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, solve=False):
        p.add_argument("instance", help="instance JSON file")
        p.add_argument("--out", default="hydrodispatch-out", help="output directory (default: %(default)s)")
        p.add_argument("--json", action="store_true", help="print a JSON summary instead of text")
        if solve:
            p.add_argument("--epsilon", type=_positive, default=1e-4, help="relative gap tolerance (default: %(default)s)")
            p.add_argument("--max-iter", type=int, default=100, help="decomposition iteration limit (default: %(default)s)")
            p.add_argument("--refine", action="store_true", help="polish the decomposition result locally")
            p.add_argument("--pump-load", action="store_true", help="include pump power in the electric balance")

    p = sub.add_parser("simulate-pipe", help="outlet temperatures of one pipeline under its schedule")
    common(p)
    p.add_argument("--pipe", help="pipeline id (default: first pipeline)")
    p.add_argument("--method", choices=["wmm", "nm", "steady", "all"], default="all")
    p.set_defaults(func=cmd_simulate_pipe)

    p = sub.add_parser("simulate-network", help="network temperatures and pressures under the schedules")
    common(p)
    p.set_defaults(func=cmd_simulate_network)

    p = sub.add_parser("dispatch", help="optimal dispatch by decomposition over mass flows")
    common(p, solve=True)
    p.add_argument("--method", choices=["wmm", "nm", "steady"], default="wmm")
    p.set_defaults(func=cmd_dispatch)

    p = sub.add_parser("steady", help="steady-state baseline dispatch")
    common(p, solve=True)
    p.set_defaults(func=cmd_steady)

    p = sub.add_parser("compare", help="steady baseline against the dynamic model")
    common(p, solve=True)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("scenarios", help="sweep wind (u) and outdoor temperature (v) scalings")
    common(p, solve=True)
    g = p.add_mutually_exclusive_group()
    g.add_argument("--grid", help='scaling grid, e.g. "u=1,1.1,1.2;v=1,1.1"')
    g.add_argument("--montecarlo", type=int, metavar="N", help="N random wind scalings")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--jobs", type=int, default=1, help="parallel worker processes")
    p.set_defaults(func=cmd_scenarios)
    return ap


def main(argv=None) -> int:
    level = os.environ.get("HYDRODISPATCH_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    if getattr(args, "max_iter", 1) < 1:
        print("error: --max-iter must be at least 1", file=sys.stderr)
        return EXIT_INPUT
    try:
        return args.func(args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except SolveError as exc:
        print(f"solve failed: {exc}", file=sys.stderr)
        return EXIT_SOLVE


if __name__ == "__main__":
    sys.exit(main())
