import numpy as np
import pytest

from enduromap.crossbar import EnduranceMap, build_delay_map, build_endurance_maps, build_voltage_maps, default_config
from enduromap.workload import Cluster, Neuron, Synapse
from enduromap.device import ResistanceState

# filled by tests/test_acceptance.py, printed after the run
ACCEPTANCE_RESULTS: dict[int, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE_RESULTS):
        ok, detail = ACCEPTANCE_RESULTS[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")


@pytest.fixture(scope="session")
def small_xbar():
    """A calibrated 45 nm, 16x16 crossbar with its maps."""
    cfg = default_config(45, M=16)
    volts = build_voltage_maps(cfg, include_hrs=False)
    return {
        "cfg": cfg,
        "voltage": volts["lrs"].grid,
        "endurance": build_endurance_maps(cfg, voltages=volts),
        "delay": build_delay_map(cfg),
    }


@pytest.fixture(scope="session")
def xbar32():
    cfg = default_config(45, M=32)
    volts = build_voltage_maps(cfg, include_hrs=False)
    return {
        "cfg": cfg,
        "voltage": volts["lrs"].grid,
        "endurance": build_endurance_maps(cfg, voltages=volts),
        "delay": build_delay_map(cfg),
    }


def random_maps(rng: np.random.Generator, M: int) -> EnduranceMap:
    hrs = rng.uniform(100.0, 1000.0, size=(M, M))
    return EnduranceMap(hrs, hrs * rng.uniform(1.5, 3.0, size=(M, M)))


STATE_WEIGHT = {ResistanceState.HRS: 0.0, ResistanceState.LRS1: 0.3, ResistanceState.LRS2: 0.6, ResistanceState.LRS3: 0.9}


def make_cluster(cid, spikes, post, pairs, states=None):
    """Cluster from pre spike rates, post count and (i, j) synapse index pairs."""
    pre = tuple(Neuron(f"{cid}.i{i}", float(s)) for i, s in enumerate(spikes))
    posts = tuple(Neuron(f"{cid}.o{j}") for j in range(post))
    syn = []
    for n, (i, j) in enumerate(pairs):
        st = ResistanceState.HRS if states is None else ResistanceState(states[n])
        syn.append(Synapse.from_weight(pre[i].id, posts[j].id, STATE_WEIGHT[st]))
    return Cluster(cid, pre, posts, tuple(syn))
