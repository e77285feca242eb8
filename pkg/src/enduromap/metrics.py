"""Figures of merit for a mapping: lifetime, spike delay, RRAM voltage, baselines."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .crossbar import DelayMap, EnduranceMap
from .mapping import MappingSolution, _overall, merge_all, parallel_map
from .placement import Placement, PlacementError, random_placement
from .seeding import derive_seed
from .workload import Cluster, InfeasibleError, Synapse, Workload

METRICS = ("lifetime", "hardware_delay", "avg_rram_voltage")


def synapse_delay(p: Placement, s: Synapse, d: DelayMap) -> float:
    try:
        k, l = p.row_of[s.pre], p.col_of[s.post]
    except KeyError as exc:
        raise PlacementError(f"synapse {s.pre}->{s.post} is not mapped (missing {exc.args[0]!r})") from None
    return float(d.grid[k, l])


def _cluster_delay(c: Cluster, p: Placement, d: DelayMap) -> tuple[float, bool]:
    """Spike-weighted mean delay and whether the unweighted fallback was used."""
    if not c.synapses:
        return 0.0, True
    delays = np.array([synapse_delay(p, s, d) for s in c.synapses])
    spikes = np.array([c.spikes(s) for s in c.synapses])
    total = spikes.sum()
    if total == 0:
        return float(delays.mean()), True
    return float(np.dot(spikes, delays) / total), False


def cluster_delay(c: Cluster, p: Placement, d: DelayMap) -> float:
    """Average spike propagation delay of a placed cluster, in ms.

    Weighted by per-synapse spikes; a cluster with no spikes at all falls
    back to the plain mean of its synapse delays.
    """
    return _cluster_delay(c, p, d)[0]


def _cluster_placements(sol: MappingSolution, w: Workload):
    for c in w.clusters:
        j = sol.assign[c.id]
        yield c, sol.placements[j].placement


def hardware_delay(sol: MappingSolution, w: Workload, d: DelayMap) -> float:
    """Cluster delays averaged with weights equal to each cluster's total spikes."""
    delays, weights = [], []
    for c, p in _cluster_placements(sol, w):
        delays.append(cluster_delay(c, p, d))
        weights.append(c.total_spikes)
    if not delays:
        return 0.0
    weights = np.array(weights)
    if weights.sum() == 0:
        return float(np.mean(delays))
    return float(np.dot(weights, delays) / weights.sum())


def flat_delay(sol: MappingSolution, w: Workload, d: DelayMap) -> float:
    """Spike-weighted mean delay over every synapse of the model."""
    num = den = 0.0
    for c, p in _cluster_placements(sol, w):
        for s in c.synapses:
            spk = c.spikes(s)
            num += spk * synapse_delay(p, s, d)
            den += spk
    return num / den if den else math.nan


def occupied_cells(sol: MappingSolution) -> list[tuple[int, int, int]]:
    """(crossbar, row, column) of every programmed cell."""
    cells = []
    for j in sorted(sol.placements):
        m = sol.merged[j]
        p = sol.placements[j].placement
        cells.extend((j, p.row_of[s.pre], p.col_of[s.post]) for s in m.synapses)
    return cells


def average_rram_voltage(sol: MappingSolution, voltage: np.ndarray) -> float:
    """Mean cell voltage over occupied cells, not weighted by spikes."""
    cells = occupied_cells(sol)
    if not cells:
        return math.nan
    grid = np.asarray(voltage)
    return float(np.mean([grid[k, l] for _, k, l in cells]))


@dataclass
class MetricSummary:
    samples: list[float]

    @property
    def median(self) -> float:
        return float(np.median(self.samples))

    @property
    def quartiles(self) -> tuple[float, float]:
        q1, q3 = np.percentile(self.samples, [25, 75])
        return float(q1), float(q3)

    def to_dict(self) -> dict:
        q1, q3 = self.quartiles
        return {"median": _jsonable(self.median), "q1": _jsonable(q1), "q3": _jsonable(q3), "n": len(self.samples)}


@dataclass
class BaselineDistribution:
    n_seeds: int
    seed: int
    metrics: dict[str, MetricSummary]

    def median(self, name: str) -> float:
        return self.metrics[name].median

    def to_dict(self) -> dict:
        return {"n_seeds": self.n_seeds, "seed": self.seed,
                "metrics": {k: v.to_dict() for k, v in self.metrics.items()}}


def round_robin(w: Workload, n_crossbars: int) -> dict[str, int]:
    return {c.id: i % n_crossbars for i, c in enumerate(w.clusters)}


def random_solution(w: Workload, n_crossbars: int, maps: EnduranceMap, rng: np.random.Generator) -> MappingSolution:
    """Round-robin crossbar assignment with uniformly random placements."""
    assign = round_robin(w, n_crossbars)
    groups: dict[int, list[Cluster]] = {}
    for c in w.clusters:
        groups.setdefault(assign[c.id], []).append(c)
    merged, placements = {}, {}
    for j in sorted(groups):
        m = merge_all(groups[j])
        if not m.fits(maps.M):
            raise InfeasibleError(
                f"round-robin puts {m.size} neurons on crossbar {j}, more than {maps.M}x{maps.M}")
        merged[j] = m
        placements[j] = random_placement(m, maps, rng)
    lifetime = _overall(p.lifetime for p in placements.values())
    return MappingSolution(assign, n_crossbars, merged, placements, lifetime)


def random_baseline(
    w: Workload,
    n_crossbars: int,
    maps: EnduranceMap,
    delay: DelayMap,
    voltage: np.ndarray,
    n_seeds: int = 100,
    seed: int = 0,
) -> BaselineDistribution:
    if n_seeds < 1:
        raise ValueError("n_seeds must be >= 1")

    def sample(k):
        sol = random_solution(w, n_crossbars, maps, np.random.default_rng(derive_seed(seed, "baseline", k)))
        return sol.lifetime, hardware_delay(sol, w, delay), average_rram_voltage(sol, voltage)

    rows = parallel_map(sample, range(n_seeds))
    metrics = {name: MetricSummary([float(r[i]) for r in rows]) for i, name in enumerate(METRICS)}
    return BaselineDistribution(n_seeds, seed, metrics)


def _jsonable(x):
    if x is None:
        return None
    x = float(x)
    return x if math.isfinite(x) else None


@dataclass
class EvaluationReport:
    overall_lifetime: float
    per_cluster_lifetimes: dict[str, float]
    hardware_delay: float
    per_cluster_delays: dict[str, float]
    avg_rram_voltage: float
    baseline: BaselineDistribution | None = None
    flags: list[str] = field(default_factory=list)

    @property
    def ratios(self) -> dict[str, float] | None:
        if self.baseline is None:
            return None
        out = {}
        for name in METRICS:
            base = self.baseline.median(name)
            out[name] = self.value(name) / base if base not in (0.0,) and math.isfinite(base) else math.nan
        return out

    def value(self, name: str) -> float:
        return {"lifetime": self.overall_lifetime, "hardware_delay": self.hardware_delay,
                "avg_rram_voltage": self.avg_rram_voltage}[name]

    def to_dict(self) -> dict:
        d = {
            "overall_lifetime": _jsonable(self.overall_lifetime),
            "overall_lifetime_frames": math.floor(self.overall_lifetime) if math.isfinite(self.overall_lifetime) else None,
            "per_cluster_lifetimes": {k: _jsonable(v) for k, v in sorted(self.per_cluster_lifetimes.items())},
            "hardware_delay_ms": _jsonable(self.hardware_delay),
            "per_cluster_delays_ms": {k: _jsonable(v) for k, v in sorted(self.per_cluster_delays.items())},
            "avg_rram_voltage": _jsonable(self.avg_rram_voltage),
            "flags": sorted(self.flags),
        }
        if self.baseline is not None:
            d["baseline"] = self.baseline.to_dict()
            d["ratios"] = {k: _jsonable(v) for k, v in self.ratios.items()}
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["name", "value", "baseline_median", "ratio"])
        ratios = self.ratios or {}
        for name in METRICS:
            base = self.baseline.median(name) if self.baseline else None
            row = [name, repr(self.value(name)), "" if base is None else repr(base),
                   "" if name not in ratios else repr(ratios[name])]
            writer.writerow(row)
        return buf.getvalue()


def evaluate(
    sol: MappingSolution,
    w: Workload,
    delay: DelayMap,
    voltage: np.ndarray,
    baseline: BaselineDistribution | None = None,
) -> EvaluationReport:
    per_life = {}
    per_delay = {}
    flags = []
    for c, p in _cluster_placements(sol, w):
        per_life[c.id] = sol.placements[sol.assign[c.id]].lifetime
        value, fallback = _cluster_delay(c, p, delay)
        per_delay[c.id] = value
        if fallback:
            flags.append(f"unweighted_delay:{c.id}")
    return EvaluationReport(
        overall_lifetime=sol.lifetime,
        per_cluster_lifetimes=per_life,
        hardware_delay=hardware_delay(sol, w, delay),
        per_cluster_delays=per_delay,
        avg_rram_voltage=average_rram_voltage(sol, voltage),
        baseline=baseline,
        flags=flags,
    )
