import json
import logging

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from enduromap.device import ResistanceState
from enduromap.workload import (
    Cluster,
    InfeasibleError,
    Neuron,
    Quantizer,
    Synapse,
    Workload,
    WorkloadError,
    dumps_workload,
    generate_synthetic,
    load_workload,
    partition_flat,
    save_workload,
    spike_histogram,
    workload_from_dict,
)

MINIMAL = {
    "frame_semantics": "image",
    "clusters": [{"id": "a", "pre": [{"id": "x", "spikes": 2.0}], "post": [{"id": "y"}],
                  "synapses": [{"pre": "x", "post": "y", "weight": 0.9}]}],
    "edges": [],
}


def test_quantizer_buckets():
    q = Quantizer()
    assert q(0.0) is ResistanceState.HRS
    assert q(-0.1) is ResistanceState.HRS
    assert q(0.3) is ResistanceState.LRS1
    assert q(-0.6) is ResistanceState.LRS2
    assert q(5.0) is ResistanceState.LRS3  # clipped
    assert Quantizer(thresholds=(0.1, 0.2, 0.3))(0.15) is ResistanceState.LRS1
    with pytest.raises(ValueError):
        Quantizer(thresholds=(0.5, 0.2, 0.7))


def test_minimal_file(tmp_path):
    p = tmp_path / "w.json"
    p.write_text(json.dumps(MINIMAL))
    w = load_workload(p)
    assert len(w.clusters) == 1
    c = w.clusters[0]
    assert c.size == (1, 1) and len(c.synapses) == 1
    assert c.synapses[0].state is ResistanceState.LRS3
    assert c.spikes(c.synapses[0]) == 2.0


def test_missing_neuron_rejected():
    bad = json.loads(json.dumps(MINIMAL))
    bad["clusters"][0]["synapses"][0]["post"] = "nope"
    with pytest.raises(WorkloadError, match="missing post neuron"):
        workload_from_dict(bad)


def test_bad_json_reports_position(tmp_path):
    p = tmp_path / "w.json"
    p.write_text('{"clusters": [\n  {"id": "a",,}]}')
    with pytest.raises(WorkloadError, match=r"w\.json:2:"):
        load_workload(p)


def test_unknown_field_warns_not_errors(caplog):
    data = json.loads(json.dumps(MINIMAL))
    data["extra"] = 1
    data["clusters"][0]["color"] = "red"
    with caplog.at_level(logging.WARNING):
        w = workload_from_dict(data)
    assert len(w.clusters) == 1
    assert "extra" in caplog.text and "color" in caplog.text


@pytest.mark.parametrize("mutate,match", [
    (lambda d: d["clusters"][0]["pre"][0].update(spikes=-1.0), "spikes"),
    (lambda d: d["clusters"][0].pop("post"), "missing field"),
    (lambda d: d["clusters"].append(dict(d["clusters"][0])), "duplicate cluster"),
    (lambda d: d["edges"].append({"src": "a", "dst": "zz"}), "unknown cluster"),
    (lambda d: d.update(frame_semantics="video"), "frame_semantics"),
])
def test_validation_errors(mutate, match):
    data = json.loads(json.dumps(MINIMAL))
    mutate(data)
    with pytest.raises(WorkloadError, match=match):
        workload_from_dict(data)


def test_duplicate_synapse_rejected():
    n, m = Neuron("x", 1.0), Neuron("y")
    s = Synapse.from_weight("x", "y", 0.5)
    with pytest.raises(WorkloadError, match="duplicate synapse"):
        Cluster("c", (n,), (m,), (s, s))


def test_state_weight_consistency_check():
    c = Cluster("c", (Neuron("x"),), (Neuron("y"),), (Synapse("x", "y", 0.9, ResistanceState.HRS),))
    with pytest.raises(WorkloadError, match="does not match"):
        c.validate(Quantizer())


def test_round_trip(tmp_path):
    w = generate_synthetic(4, 5, 3, seed=1, frame_semantics="500ms-window")
    save_workload(w, tmp_path / "w.json")
    assert load_workload(tmp_path / "w.json") == w


def test_synapse_spikes_follow_pre_neuron():
    w = generate_synthetic(3, seed=2)
    for c in w.clusters:
        rates = {n.id: n.spikes_per_frame for n in c.pre}
        for s in c.synapses:
            assert c.spikes(s) == rates[s.pre]


def test_generator_is_deterministic():
    assert dumps_workload(generate_synthetic(seed=5)) == dumps_workload(generate_synthetic(seed=5))
    assert dumps_workload(generate_synthetic(seed=5)) != dumps_workload(generate_synthetic(seed=6))


def test_density_one_is_complete():
    w = generate_synthetic(2, 4, 3, density=1.0)
    assert all(len(c.synapses) == 12 for c in w.clusters)


def test_synapse_count_binomial_bound():
    w = generate_synthetic(10, 16, 16, density=0.5, seed=7)
    n, p = 256, 0.5
    sigma = np.sqrt(n * p * (1 - p))
    for c in w.clusters:
        assert abs(len(c.synapses) - n * p) <= 3 * sigma


def test_generator_max_spikes_pinned():
    w = generate_synthetic(20, seed=7)
    assert w.synapse_spikes().max() == 6.42
    assert spike_histogram(w).max_spikes == 6.42


def test_histogram_single_value():
    pre = tuple(Neuron(f"i{k}", 3.0) for k in range(3))
    post = (Neuron("o"),)
    syn = tuple(Synapse.from_weight(n.id, "o", 0.5) for n in pre)
    h = spike_histogram(Workload((Cluster("c", pre, post, syn),)), bins=5)
    assert np.count_nonzero(h.counts) == 1 and h.counts.sum() == 3


def test_histogram_csv(tmp_path):
    h = spike_histogram(generate_synthetic(3, seed=0), bins=4)
    h.to_csv(tmp_path / "h.csv")
    lines = (tmp_path / "h.csv").read_text().splitlines()
    assert lines[0] == "bin_low,bin_high,count" and len(lines) == 5
    assert sum(int(l.split(",")[2]) for l in lines[1:]) == h.counts.sum()


def test_partition_fits_one_crossbar():
    edges = [(f"a{i}", f"b{j}", 0.5) for i in range(3) for j in range(2)]
    w = partition_flat(edges, {f"a{i}": 1.0 for i in range(3)}, M=4)
    assert len(w.clusters) == 1 and w.clusters[0].size == (3, 2)


def test_partition_chain_needs_two_clusters():
    M = 4
    names = [f"n{k:02d}" for k in range(2 * M)]
    edges = [(names[k], names[k + 1], 0.5) for k in range(2 * M - 1)]
    w = partition_flat(edges, {n: 1.0 for n in names}, M)
    assert len(w.clusters) >= 2
    # neurons that are posts in one cluster and pres in another become traffic edges
    assert w.edges


def test_partition_rejects_large_fan_in():
    edges = [(f"a{i}", "z", 0.5) for i in range(5)]
    with pytest.raises(InfeasibleError, match="fan-in"):
        partition_flat(edges, {}, M=4)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10_000), M=st.integers(2, 8), n=st.integers(2, 30), p=st.floats(0.05, 0.5))
def test_partition_respects_size_bounds(seed, M, n, p):
    rng = np.random.default_rng(seed)
    names = [f"n{k}" for k in range(n)]
    edges = [(names[a], names[b], float(rng.normal())) for a in range(n) for b in range(n)
             if a != b and rng.random() < p]
    fan_in = {}
    for a, b, _ in edges:
        fan_in.setdefault(b, set()).add(a)
    if any(len(v) > M for v in fan_in.values()):
        with pytest.raises(InfeasibleError):
            partition_flat(edges, {}, M)
        return
    w = partition_flat(edges, {x: float(rng.uniform(0, 5)) for x in names}, M)
    assert all(c.fits(M) for c in w.clusters)
    assert w.n_synapses == len({(a, b) for a, b, _ in edges})
