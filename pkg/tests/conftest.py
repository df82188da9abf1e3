import pytest

from digca.policies import PolicyConfig
from digca.protocol import ExecutionOrder
from digca.sim import NetworkModel, SimConfig, Simulation


def make_sim(**kw):
    degree = kw.pop("degree", 3)
    kw.setdefault("algorithm", ExecutionOrder.TOP_DOWN)
    return Simulation(SimConfig(policy=PolicyConfig(max_out_degree=degree), **kw))


@pytest.fixture
def sim_factory():
    return make_sim


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(results):
        terminalreporter.write_line(results[n][1])
