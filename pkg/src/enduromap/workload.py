"""Clustered spiking workloads: model, JSON I/O, synthetic generation."""

from __future__ import annotations

import json
import logging
import math
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

from .device import ResistanceState

log = logging.getLogger(__name__)

FRAME_SEMANTICS = ("image", "500ms-window")


class WorkloadError(ValueError):
    """A workload file or object violates the workload contract."""


class InfeasibleError(ValueError):
    """A cluster or workload does not fit the available hardware."""


@dataclass(frozen=True)
class Quantizer:
    """Min-max linear quantization of ``|weight|`` into the four cell states.

    Magnitudes are normalized to ``[0, 1]`` over ``[w_min, w_max]`` (values
    outside are clipped) and bucketed by ``thresholds``; the lowest bucket
    is HRS.
    """

    w_min: float = 0.0
    w_max: float = 1.0
    thresholds: tuple[float, float, float] = (0.25, 0.5, 0.75)

    def __post_init__(self):
        if not self.w_max > self.w_min:
            raise ValueError("w_max must exceed w_min")
        if list(self.thresholds) != sorted(self.thresholds):
            raise ValueError("quantization thresholds must be increasing")

    def __call__(self, weight: float) -> ResistanceState:
        x = (abs(weight) - self.w_min) / (self.w_max - self.w_min)
        x = min(max(x, 0.0), 1.0)
        level = sum(x >= t for t in self.thresholds)
        return ResistanceState(level)


DEFAULT_QUANTIZER = Quantizer()


@dataclass(frozen=True)
class Neuron:
    id: str
    spikes_per_frame: float = 0.0

    def __post_init__(self):
        if not (math.isfinite(self.spikes_per_frame) and self.spikes_per_frame >= 0):
            raise WorkloadError(f"neuron {self.id!r}: spikes must be finite and >= 0, got {self.spikes_per_frame!r}")


@dataclass(frozen=True)
class Synapse:
    pre: str
    post: str
    weight: float
    state: ResistanceState

    @classmethod
    def from_weight(cls, pre: str, post: str, weight: float, quantizer: Quantizer = DEFAULT_QUANTIZER) -> "Synapse":
        return cls(pre, post, float(weight), quantizer(weight))


@dataclass(frozen=True)
class Cluster:
    """Pre/post neuron sets plus the synapses between them.

    Neuron and synapse tuples are kept sorted by id so that two clusters
    built from the same sets compare equal.
    """

    id: str
    pre: tuple[Neuron, ...]
    post: tuple[Neuron, ...]
    synapses: tuple[Synapse, ...]
    _pre_index: dict = field(init=False, repr=False, compare=False)
    _post_index: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        pre = tuple(sorted(self.pre, key=lambda n: n.id))
        post = tuple(sorted(self.post, key=lambda n: n.id))
        syn = tuple(sorted(self.synapses, key=lambda s: (s.pre, s.post)))
        object.__setattr__(self, "pre", pre)
        object.__setattr__(self, "post", post)
        object.__setattr__(self, "synapses", syn)
        object.__setattr__(self, "_pre_index", {n.id: i for i, n in enumerate(pre)})
        object.__setattr__(self, "_post_index", {n.id: i for i, n in enumerate(post)})
        self.validate()

    def validate(self, quantizer: Quantizer | None = None) -> None:
        if not self.pre or not self.post:
            raise WorkloadError(f"cluster {self.id!r}: needs at least one pre and one post neuron")
        if len(self._pre_index) != len(self.pre):
            raise WorkloadError(f"cluster {self.id!r}: duplicate pre-synaptic neuron ids")
        if len(self._post_index) != len(self.post):
            raise WorkloadError(f"cluster {self.id!r}: duplicate post-synaptic neuron ids")
        seen = set()
        for s in self.synapses:
            if s.pre not in self._pre_index:
                raise WorkloadError(f"cluster {self.id!r}: synapse {s.pre}->{s.post} references missing pre neuron {s.pre!r}")
            if s.post not in self._post_index:
                raise WorkloadError(f"cluster {self.id!r}: synapse {s.pre}->{s.post} references missing post neuron {s.post!r}")
            if (s.pre, s.post) in seen:
                raise WorkloadError(f"cluster {self.id!r}: duplicate synapse {s.pre}->{s.post}")
            seen.add((s.pre, s.post))
            if quantizer is not None and quantizer(s.weight) != s.state:
                raise WorkloadError(
                    f"cluster {self.id!r}: synapse {s.pre}->{s.post} state {s.state.name} "
                    f"does not match weight {s.weight}"
                )

    @property
    def size(self) -> tuple[int, int]:
        return len(self.pre), len(self.post)

    def pre_index(self, neuron_id: str) -> int:
        return self._pre_index[neuron_id]

    def post_index(self, neuron_id: str) -> int:
        return self._post_index[neuron_id]

    def spikes(self, s: Synapse) -> float:
        return self.pre[self._pre_index[s.pre]].spikes_per_frame

    @property
    def total_spikes(self) -> float:
        return float(sum(self.spikes(s) for s in self.synapses))

    def arrays(self):
        """Synapse endpoint indices, spike counts and LRS flags as arrays."""
        si = np.array([self._pre_index[s.pre] for s in self.synapses], dtype=np.intp)
        sj = np.array([self._post_index[s.post] for s in self.synapses], dtype=np.intp)
        pre_spk = np.array([n.spikes_per_frame for n in self.pre], dtype=float)
        spk = pre_spk[si] if si.size else np.zeros(0)
        lrs = np.array([s.state.is_lrs for s in self.synapses], dtype=bool)
        return si, sj, spk, lrs

    def fits(self, M: int) -> bool:
        return len(self.pre) <= M and len(self.post) <= M

    def content_key(self) -> tuple:
        return (
            tuple((n.id, n.spikes_per_frame) for n in self.pre),
            tuple(n.id for n in self.post),
            tuple((s.pre, s.post, s.weight, int(s.state)) for s in self.synapses),
        )


@dataclass(frozen=True)
class Edge:
    src: str
    dst: str
    spikes: float


@dataclass(frozen=True)
class Workload:
    clusters: tuple[Cluster, ...]
    edges: tuple[Edge, ...] = ()
    frame_semantics: str = "image"

    def __post_init__(self):
        object.__setattr__(self, "clusters", tuple(self.clusters))
        object.__setattr__(self, "edges", tuple(self.edges))
        ids = [c.id for c in self.clusters]
        if len(set(ids)) != len(ids):
            dup = sorted({i for i in ids if ids.count(i) > 1})
            raise WorkloadError(f"duplicate cluster ids: {dup}")
        known = set(ids)
        for e in self.edges:
            if e.src not in known or e.dst not in known:
                raise WorkloadError(f"edge {e.src}->{e.dst} references an unknown cluster")
        if self.frame_semantics not in FRAME_SEMANTICS:
            raise WorkloadError(f"frame_semantics must be one of {FRAME_SEMANTICS}, got {self.frame_semantics!r}")

    def cluster(self, cluster_id: str) -> Cluster:
        for c in self.clusters:
            if c.id == cluster_id:
                return c
        raise KeyError(cluster_id)

    @property
    def n_synapses(self) -> int:
        return sum(len(c.synapses) for c in self.clusters)

    def synapse_spikes(self) -> np.ndarray:
        parts = [c.arrays()[2] for c in self.clusters]
        return np.concatenate(parts) if parts else np.zeros(0)


# -- serialization ------------------------------------------------------------

_TOP_FIELDS = {"frame_semantics", "clusters", "edges"}
_CLUSTER_FIELDS = {"id", "pre", "post", "synapses"}


def _warn_unknown(obj: dict, allowed: set, where: str) -> None:
    extra = sorted(set(obj) - allowed)
    if extra:
        log.warning("%s: ignoring unknown fields %s", where, extra)


def workload_to_dict(w: Workload) -> dict:
    return {
        "frame_semantics": w.frame_semantics,
        "clusters": [
            {
                "id": c.id,
                "pre": [{"id": n.id, "spikes": n.spikes_per_frame} for n in c.pre],
                "post": [{"id": n.id} for n in c.post],
                "synapses": [{"pre": s.pre, "post": s.post, "weight": s.weight} for s in c.synapses],
            }
            for c in w.clusters
        ],
        "edges": [{"src": e.src, "dst": e.dst, "spikes": e.spikes} for e in w.edges],
    }


def _require(obj, key, where):
    if not isinstance(obj, dict):
        raise WorkloadError(f"{where}: expected an object, got {type(obj).__name__}")
    if key not in obj:
        raise WorkloadError(f"{where}: missing field {key!r}")
    return obj[key]


def workload_from_dict(data: dict, quantizer: Quantizer = DEFAULT_QUANTIZER) -> Workload:
    if not isinstance(data, dict):
        raise WorkloadError("workload: top level must be an object")
    _warn_unknown(data, _TOP_FIELDS, "workload")
    clusters = []
    for ci, raw in enumerate(_require(data, "clusters", "workload")):
        where = f"clusters[{ci}]"
        cid = str(_require(raw, "id", where))
        _warn_unknown(raw, _CLUSTER_FIELDS, where)
        try:
            pre = [Neuron(str(_require(n, "id", f"{where}.pre[{i}]")), float(n.get("spikes", 0.0)))
                   for i, n in enumerate(_require(raw, "pre", where))]
            post = [Neuron(str(_require(n, "id", f"{where}.post[{i}]")))
                    for i, n in enumerate(_require(raw, "post", where))]
            syn = [
                Synapse.from_weight(
                    str(_require(s, "pre", f"{where}.synapses[{i}]")),
                    str(_require(s, "post", f"{where}.synapses[{i}]")),
                    float(_require(s, "weight", f"{where}.synapses[{i}]")),
                    quantizer,
                )
                for i, s in enumerate(_require(raw, "synapses", where))
            ]
        except (TypeError, ValueError) as exc:
            if isinstance(exc, WorkloadError):
                raise
            raise WorkloadError(f"{where} ({cid}): {exc}") from exc
        clusters.append(Cluster(cid, tuple(pre), tuple(post), tuple(syn)))
    edges = []
    for i, e in enumerate(data.get("edges", [])):
        where = f"edges[{i}]"
        edges.append(Edge(str(_require(e, "src", where)), str(_require(e, "dst", where)), float(e.get("spikes", 0.0))))
    return Workload(tuple(clusters), tuple(edges), data.get("frame_semantics", "image"))


def dumps_workload(w: Workload) -> str:
    return json.dumps(workload_to_dict(w), indent=1, sort_keys=True) + "\n"


def save_workload(w: Workload, path) -> None:
    Path(path).write_text(dumps_workload(w))


def load_workload(path, quantizer: Quantizer = DEFAULT_QUANTIZER) -> Workload:
    text = Path(path).read_text()
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise WorkloadError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from exc
    return workload_from_dict(data, quantizer)


# -- statistics ---------------------------------------------------------------

@dataclass(frozen=True)
class SpikeHistogram:
    counts: np.ndarray
    edges: np.ndarray
    max_spikes: float

    def rows(self):
        for lo, hi, c in zip(self.edges[:-1], self.edges[1:], self.counts):
            yield float(lo), float(hi), int(c)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            fh.write("bin_low,bin_high,count\n")
            for lo, hi, c in self.rows():
                fh.write(f"{lo!r},{hi!r},{c}\n")


def spike_histogram(w: Workload, bins: int = 20) -> SpikeHistogram:
    if bins < 1:
        raise ValueError("bins must be >= 1")
    spikes = w.synapse_spikes()
    if spikes.size == 0:
        return SpikeHistogram(np.zeros(0, dtype=int), np.zeros(0), 0.0)
    counts, edges = np.histogram(spikes, bins=bins)
    return SpikeHistogram(counts, edges, float(spikes.max()))


# -- generation -----------------------------------------------------------------

def generate_synthetic(
    n_clusters: int = 10,
    pre_per_cluster: int = 16,
    post_per_cluster: int = 16,
    density: float = 0.5,
    spike_sigma: float = 1.0,
    spike_max: float | None = 6.42,
    weight_std: float = 0.4,
    seed: int = 0,
    frame_semantics: str = "image",
    quantizer: Quantizer = DEFAULT_QUANTIZER,
) -> Workload:
    """Random clustered workload with log-normal per-neuron spike rates.

    The log-normal tail makes a few "critical" neurons carry most spikes.
    When ``spike_max`` is set, rates are rescaled so the busiest synapse
    carries exactly that many spikes per frame. Consecutive clusters are
    chained by inter-cluster edges.
    """
    if min(n_clusters, pre_per_cluster, post_per_cluster) < 1:
        raise ValueError("sizes must be >= 1")
    if not 0 < density <= 1:
        raise ValueError("density must be in (0, 1]")
    rng = np.random.default_rng(seed)
    raw = []
    for c in range(n_clusters):
        spk = rng.lognormal(mean=0.0, sigma=spike_sigma, size=pre_per_cluster)
        mask = rng.random((pre_per_cluster, post_per_cluster)) < density if density < 1 else np.ones(
            (pre_per_cluster, post_per_cluster), dtype=bool)
        weights = rng.normal(0.0, weight_std, size=(pre_per_cluster, post_per_cluster))
        raw.append((spk, mask, weights))

    scale = 1.0
    if spike_max is not None:
        peak = max((spk[mask.any(axis=1)].max() for spk, mask, _ in raw if mask.any()), default=0.0)
        if peak > 0:
            scale = spike_max / peak

    clusters = []
    for c, (spk, mask, weights) in enumerate(raw):
        cid = f"c{c}"
        pre = [Neuron(f"{cid}.i{i}", float(spk[i] * scale)) for i in range(pre_per_cluster)]
        post = [Neuron(f"{cid}.o{j}") for j in range(post_per_cluster)]
        syn = [
            Synapse.from_weight(pre[i].id, post[j].id, float(weights[i, j]), quantizer)
            for i, j in zip(*np.nonzero(mask))
        ]
        clusters.append(Cluster(cid, tuple(pre), tuple(post), tuple(syn)))
    # pin the busiest synapse to exactly spike_max despite rounding in the rescale
    if spike_max is not None and any(c.synapses for c in clusters):
        clusters = _pin_max(clusters, spike_max)
    edges = [
        Edge(clusters[c].id, clusters[c + 1].id, float(sum(n.spikes_per_frame for n in clusters[c + 1].pre)))
        for c in range(n_clusters - 1)
    ]
    return Workload(tuple(clusters), tuple(edges), frame_semantics)


def _pin_max(clusters: list[Cluster], spike_max: float) -> list[Cluster]:
    best = None
    for ci, c in enumerate(clusters):
        for s in c.synapses:
            v = c.spikes(s)
            if best is None or v > best[0]:
                best = (v, ci, s.pre)
    _, ci, pre_id = best
    c = clusters[ci]
    pre = tuple(Neuron(n.id, spike_max) if n.id == pre_id else n for n in c.pre)
    clusters[ci] = Cluster(c.id, pre, c.post, c.synapses)
    return clusters


def partition_flat(
    edges: Iterable[tuple[str, str, float]],
    spikes: Mapping[str, float],
    M: int,
    quantizer: Quantizer = DEFAULT_QUANTIZER,
    frame_semantics: str = "image",
) -> Workload:
    """Greedily pack a flat neuron graph into crossbar-sized clusters.

    Post-synaptic neurons are taken in id order and appended to the current
    cluster while its pre set stays within ``M`` and its post count below
    ``M``. Each cluster owns every synapse into its post neurons. No attempt
    is made to minimize inter-cluster traffic.
    """
    fan_in: dict[str, dict[str, float]] = defaultdict(dict)
    for pre, post, weight in edges:
        fan_in[str(post)][str(pre)] = float(weight)
    for post, pres in fan_in.items():
        if len(pres) > M:
            raise InfeasibleError(f"neuron {post!r} has fan-in {len(pres)} > crossbar size {M}")

    groups: list[tuple[set, list]] = []
    cur_pre: set = set()
    cur_post: list = []
    for post in sorted(fan_in):
        pres = set(fan_in[post])
        if cur_post and (len(cur_pre | pres) > M or len(cur_post) >= M):
            groups.append((cur_pre, cur_post))
            cur_pre, cur_post = set(), []
        cur_pre |= pres
        cur_post.append(post)
    if cur_post:
        groups.append((cur_pre, cur_post))

    clusters = []
    owner_pre: dict[str, list[str]] = defaultdict(list)
    owner_post: dict[str, str] = {}
    for g, (pres, posts) in enumerate(groups):
        cid = f"p{g}"
        syn = [Synapse.from_weight(p, q, fan_in[q][p], quantizer) for q in posts for p in sorted(fan_in[q])]
        clusters.append(Cluster(
            cid,
            tuple(Neuron(p, float(spikes.get(p, 0.0))) for p in sorted(pres)),
            tuple(Neuron(q) for q in posts),
            tuple(syn),
        ))
        for p in pres:
            owner_pre[p].append(cid)
        for q in posts:
            owner_post[q] = cid

    traffic: dict[tuple[str, str], float] = defaultdict(float)
    for neuron, src in owner_post.items():
        for dst in owner_pre.get(neuron, ()):
            if dst != src:
                traffic[(src, dst)] += float(spikes.get(neuron, 0.0))
    edge_list = [Edge(s, d, v) for (s, d), v in sorted(traffic.items())]
    return Workload(tuple(clusters), tuple(edge_list), frame_semantics)
