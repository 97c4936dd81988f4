import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from hydrodispatch.dispatch import gbd_solve, refine_local, solve_steady  # noqa: E402
from hydrodispatch.network import (  # noqa: E402
    Constants,
    FlowHistory,
    PipelineSpec,
    bundled_instance_path,
    load_instance,
)


def make_pipe(length=1750.0, area=0.5, lam=0.12, depth=3, flows=None, temps=None, t_am=10.0, m_min=1.0, m_max=1e4):
    flows = np.zeros(depth) if flows is None else np.asarray(flows, float)
    temps = np.zeros(depth) if temps is None else np.asarray(temps, float)
    return PipelineSpec(
        id="P",
        from_node="A",
        to_node="B",
        length=length,
        area=area,
        heat_transfer_coeff=lam,
        resistance=0.0,
        m_min=m_min,
        m_max=m_max,
        ambient_temp=np.full(max(1, len(flows)), t_am),
        history_depth=depth,
        history_flow=flows[:depth],
        history_temp=temps[:depth],
    )


WORKED_FLOWS = np.array([116.10, 113.68, 185.52, 120.21])  # periods 9..12
WORKED_TEMPS = np.array([80.0, 90.0, 100.0, 110.0])


@pytest.fixture
def worked_pipe():
    """Pipe and flow history of the single-pipeline worked example, at period 0 = hour 12."""
    pipe = make_pipe(flows=WORKED_FLOWS, temps=WORKED_TEMPS)
    hist = FlowHistory(WORKED_FLOWS, WORKED_TEMPS, depth=3)
    return pipe, hist


@pytest.fixture(scope="session")
def six_bus():
    return load_instance(bundled_instance_path("six-bus"))


@pytest.fixture(scope="session")
def pipe_example():
    return load_instance(bundled_instance_path("pipe-example"))


@pytest.fixture(scope="session")
def gbd_run(six_bus):
    return gbd_solve(six_bus)


@pytest.fixture(scope="session")
def steady_run(six_bus):
    return solve_steady(six_bus)


@pytest.fixture(scope="session")
def refined_run(six_bus, gbd_run):
    return refine_local(six_bus, gbd_run[0])


@pytest.fixture
def consts():
    return Constants()


def pytest_terminal_summary(terminalreporter):
    lines = []
    for key in ("passed", "failed"):
        for rep in terminalreporter.stats.get(key, []):
            if rep.when == "call" and "test_acceptance.py::test_criterion_" in rep.nodeid:
                lines.append((rep.nodeid.split("::")[1], key.upper()))
    if lines:
        terminalreporter.section("acceptance criteria")
        for name, outcome in sorted(lines):
            terminalreporter.write_line(f"{name}: {'PASS' if outcome == 'PASSED' else 'FAIL'}")
