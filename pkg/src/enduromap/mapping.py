"""Cluster-to-crossbar mapping.

With enough crossbars every cluster gets its own. With fewer, clusters
sharing a crossbar are merged into one larger cluster and placed together;
a hill-climbing search over cluster relocations looks for the assignment
whose weakest crossbar lives longest.
"""

from __future__ import annotations

import json
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import reduce

import numpy as np

from .crossbar import CrossbarConfig, EnduranceMap
from .placement import (
    DEFAULT_BUDGET,
    DEFAULT_RESTARTS,
    Placement,
    PlacementResult,
    lifetime_of_placement,
    optimize_placement,
    placement_from_dict,
)
from .seeding import derive_seed
from .workload import Cluster, InfeasibleError, Workload, WorkloadError

DEFAULT_HC_BUDGET = 5000
DEFAULT_PATIENCE = 50
INNER_BUDGET_FRACTION = 0.1


class MergeConflict(WorkloadError):
    """Two clusters disagree about a shared neuron or synapse."""


class SolutionError(ValueError):
    """A mapping solution violates the assignment constraints."""


def max_workers() -> int:
    try:
        return max(1, int(os.environ.get("ENDUROMAP_THREADS", "1")))
    except ValueError:
        return 1


def parallel_map(fn, items):
    """``map`` over a thread pool capped by ``ENDUROMAP_THREADS``; order preserved."""
    items = list(items)
    n = min(max_workers(), len(items))
    if n <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(n) as pool:
        return list(pool.map(fn, items))


@dataclass(frozen=True)
class HardwareConfig:
    n_crossbars: int
    crossbar: CrossbarConfig = field(default_factory=CrossbarConfig)

    def __post_init__(self):
        if self.n_crossbars < 1:
            raise ValueError("need at least one crossbar")

    @property
    def M(self) -> int:
        return self.crossbar.M


@dataclass
class MappingSolution:
    assign: dict[str, int]
    n_crossbars: int
    merged: dict[int, Cluster]
    placements: dict[int, PlacementResult]
    lifetime: float
    stats: dict = field(default_factory=dict)

    def clusters_on(self, xbar: int) -> list[str]:
        return sorted(c for c, j in self.assign.items() if j == xbar)

    def crossbar_lifetimes(self) -> dict[int, float]:
        return {j: p.lifetime for j, p in sorted(self.placements.items())}

    def to_dict(self, hardware: dict | None = None, timing: bool = False) -> dict:
        """JSON-ready form. ``wall_time`` is left out unless ``timing`` is set,
        so that repeated runs serialize to identical bytes."""
        per = []
        for j in sorted(self.placements):
            p = self.placements[j]
            d = p.to_dict()
            per.append({
                "crossbar": j,
                "clusters": self.clusters_on(j),
                "lifetime": d["lifetime"],
                "limiting_synapse": d["limiting_synapse"],
                "rows": d["rows"],
                "cols": d["cols"],
            })
        keep = ("evaluated", "accepted", "trace") + (("wall_time",) if timing else ())
        stats = {k: v for k, v in self.stats.items() if k in keep}
        if "trace" in stats:
            stats["trace"] = [float(x) if math.isfinite(x) else None for x in stats["trace"]]
        return {
            "hardware": hardware or {"n_crossbars": self.n_crossbars},
            "assign": dict(sorted(self.assign.items())),
            "per_crossbar": per,
            "overall_lifetime": float(self.lifetime) if math.isfinite(self.lifetime) else None,
            "search_stats": stats,
        }

    def to_json(self, hardware: dict | None = None, timing: bool = False) -> str:
        return json.dumps(self.to_dict(hardware, timing), indent=2, sort_keys=True) + "\n"


# -- merging ----------------------------------------------------------------------

def _merged_id(*ids: str) -> str:
    parts = set()
    for i in ids:
        parts.update(i.split("+"))
    return "+".join(sorted(parts))


def merge_clusters(a: Cluster, b: Cluster) -> Cluster:
    """Set union of two clusters' neurons and synapses."""
    pre = {n.id: n for n in a.pre}
    for n in b.pre:
        if n.id in pre and pre[n.id] != n:
            raise MergeConflict(f"merging {a.id!r} and {b.id!r}: neuron {n.id!r} has conflicting spike rates")
        pre[n.id] = n
    post = {n.id: n for n in a.post}
    post.update({n.id: n for n in b.post})
    syn = {(s.pre, s.post): s for s in a.synapses}
    for s in b.synapses:
        other = syn.get((s.pre, s.post))
        if other is not None and other != s:
            raise MergeConflict(
                f"merging {a.id!r} and {b.id!r}: synapse {s.pre}->{s.post} has conflicting weights")
        syn[(s.pre, s.post)] = s
    return Cluster(_merged_id(a.id, b.id), tuple(pre.values()), tuple(post.values()), tuple(syn.values()))


def merge_all(clusters) -> Cluster:
    clusters = sorted(clusters, key=lambda c: c.id)
    return reduce(merge_clusters, clusters)


def _merged_size(clusters) -> tuple[int, int]:
    pre, post = set(), set()
    for c in clusters:
        pre.update(n.id for n in c.pre)
        post.update(n.id for n in c.post)
    return len(pre), len(post)


def _fits(clusters, M: int) -> bool:
    p, q = _merged_size(clusters)
    return p <= M and q <= M


# -- evaluation with memoized placements -----------------------------------------

class _CrossbarSolver:
    """Places merged clusters, memoized on the set of clusters they contain."""

    def __init__(self, workload: Workload, maps: EnduranceMap, budget: int, restarts: int, seed: int):
        self.by_id = {c.id: c for c in workload.clusters}
        self.maps = maps
        self.budget = budget
        self.restarts = restarts
        self.seed = seed
        self.cache: dict[tuple[str, ...], tuple[Cluster, PlacementResult]] = {}
        self.solves = 0

    def solve(self, ids, budget: int | None = None) -> tuple[Cluster, PlacementResult]:
        key = tuple(sorted(ids))
        use_budget = self.budget if budget is None else budget
        if budget is None and key in self.cache:
            return self.cache[key]
        merged = merge_all(self.by_id[i] for i in key)
        # stream depends only on content so cache hits and misses agree
        result = optimize_placement(merged, self.maps, use_budget, self.restarts, derive_seed(self.seed, *key))
        self.solves += 1
        if budget is None:
            self.cache[key] = (merged, result)
        return merged, result


def _overall(lifetimes) -> float:
    finite = [x for x in lifetimes if math.isfinite(x)]
    return min(finite) if finite else math.inf


def _check_fits(workload: Workload, M: int) -> None:
    for c in workload.clusters:
        if not c.fits(M):
            p, q = c.size
            raise InfeasibleError(f"cluster {c.id!r} ({p}x{q}) does not fit a {M}x{M} crossbar")


def map_unlimited(
    w: Workload,
    maps: EnduranceMap,
    budget: int = DEFAULT_BUDGET,
    restarts: int = DEFAULT_RESTARTS,
    seed: int = 0,
) -> MappingSolution:
    """One cluster per crossbar; overall lifetime is the weakest cluster's."""
    M = maps.M
    _check_fits(w, M)
    solver = _CrossbarSolver(w, maps, budget, restarts, seed)
    t0 = time.perf_counter()
    results = parallel_map(lambda c: solver.solve([c.id]), w.clusters)
    assign = {c.id: j for j, c in enumerate(w.clusters)}
    merged = {j: r[0] for j, r in enumerate(results)}
    placements = {j: r[1] for j, r in enumerate(results)}
    lifetime = _overall(p.lifetime for p in placements.values())
    stats = {"evaluated": len(w.clusters), "accepted": 0, "wall_time": time.perf_counter() - t0, "trace": [lifetime]}
    return MappingSolution(assign, len(w.clusters), merged, placements, lifetime, stats)


def first_fit_decreasing(w: Workload, n_crossbars: int, M: int) -> dict[str, int]:
    order = sorted(w.clusters, key=lambda c: (-(len(c.pre) + len(c.post)), c.id))
    bins: list[list[Cluster]] = [[] for _ in range(n_crossbars)]
    assign = {}
    for c in order:
        for j, b in enumerate(bins):
            if _fits(b + [c], M):
                b.append(c)
                assign[c.id] = j
                break
        else:
            raise InfeasibleError(
                f"cluster {c.id!r} does not fit on any of {n_crossbars} crossbars ({M}x{M}) by first-fit")
    return assign


def _groups(assign: dict[str, int]) -> dict[int, list[str]]:
    groups: dict[int, list[str]] = {}
    for cid, j in assign.items():
        groups.setdefault(j, []).append(cid)
    return groups


def hill_climb_map(
    w: Workload,
    hw: HardwareConfig,
    maps: EnduranceMap,
    budget: int = DEFAULT_HC_BUDGET,
    patience: int = DEFAULT_PATIENCE,
    seed: int = 0,
    placement_budget: int = DEFAULT_BUDGET,
    restarts: int = DEFAULT_RESTARTS,
    inner_fraction: float = INNER_BUDGET_FRACTION,
) -> MappingSolution:
    """Hill climbing over cluster-to-crossbar assignments.

    Starts from first-fit-decreasing. Each step relocates one random cluster
    to a different random crossbar; the move is kept only if the minimum
    crossbar lifetime strictly improves. The search stops after ``budget``
    proposed moves or ``patience`` consecutive rejections. Placements during
    the search use ``inner_fraction`` of ``placement_budget``; the winning
    assignment is re-placed at the full budget.
    """
    M = hw.M
    if maps.M != M:
        raise ValueError(f"endurance map is {maps.M}x{maps.M} but hardware crossbars are {M}x{M}")
    _check_fits(w, M)
    t0 = time.perf_counter()
    assign = first_fit_decreasing(w, hw.n_crossbars, M)
    by_id = {c.id: c for c in w.clusters}
    inner = max(1, int(round(placement_budget * inner_fraction)))
    solver = _CrossbarSolver(w, maps, inner, restarts, seed)

    groups = _groups(assign)
    xbar_life = {j: solver.solve(ids)[1].lifetime for j, ids in groups.items()}
    current = _overall(xbar_life.values())
    trace = [current]
    rng = np.random.default_rng(derive_seed(seed, "hill-climb"))
    cluster_ids = sorted(by_id)
    evaluated = accepted = rejected = 0

    while hw.n_crossbars > 1 and evaluated < budget and rejected < patience:
        evaluated += 1
        cid = cluster_ids[int(rng.integers(len(cluster_ids)))]
        src = assign[cid]
        dst = int(rng.integers(hw.n_crossbars - 1))
        dst += dst >= src
        dst_ids = groups.get(dst, []) + [cid]
        if not _fits([by_id[i] for i in dst_ids], M):
            rejected += 1
            continue
        src_ids = [i for i in groups[src] if i != cid]
        trial = dict(xbar_life)
        trial[dst] = solver.solve(dst_ids)[1].lifetime
        if src_ids:
            trial[src] = solver.solve(src_ids)[1].lifetime
        else:
            del trial[src]
        value = _overall(trial.values())
        if value > current:
            assign[cid] = dst
            groups = _groups(assign)
            xbar_life = trial
            current = value
            trace.append(current)
            accepted += 1
            rejected = 0
        else:
            rejected += 1

    merged, placements = {}, {}
    for j, ids in sorted(_groups(assign).items()):
        m, quick = solver.solve(ids)
        _, full = solver.solve(ids, budget=placement_budget)
        merged[j] = m
        placements[j] = full if full.lifetime >= quick.lifetime else quick
    lifetime = _overall(p.lifetime for p in placements.values())
    stats = {
        "evaluated": evaluated,
        "accepted": accepted,
        "wall_time": time.perf_counter() - t0,
        "trace": trace,
        "initial_lifetime": trace[0],
        "search_lifetime": current,
        "placement_solves": solver.solves,
    }
    return MappingSolution(dict(sorted(assign.items())), hw.n_crossbars, merged, placements, lifetime, stats)


# -- validation / reload ---------------------------------------------------------------

def validate_solution(sol: MappingSolution, w: Workload, M: int, maps: EnduranceMap | None = None) -> None:
    """Check one-crossbar-per-cluster, size bounds, injectivity and reported lifetimes."""
    ids = {c.id for c in w.clusters}
    if set(sol.assign) != ids:
        missing = sorted(ids - set(sol.assign))
        extra = sorted(set(sol.assign) - ids)
        raise SolutionError(f"assignment mismatch: missing {missing}, unknown {extra}")
    for cid, j in sol.assign.items():
        if not 0 <= j < sol.n_crossbars:
            raise SolutionError(f"cluster {cid!r} assigned to nonexistent crossbar {j}")
    groups = _groups(sol.assign)
    if set(groups) != set(sol.placements):
        raise SolutionError("placements do not match the occupied crossbars")
    by_id = {c.id: c for c in w.clusters}
    for j, cids in groups.items():
        merged = merge_all(by_id[i] for i in cids)
        if not merged.fits(M):
            raise SolutionError(f"crossbar {j} holds {merged.size} neurons, more than {M}x{M}")
        p = sol.placements[j].placement
        try:
            p.validate(merged, M)
        except ValueError as exc:
            raise SolutionError(f"crossbar {j}: {exc}") from exc
        if maps is not None:
            life, _ = lifetime_of_placement(merged, p, maps)
            if life != sol.placements[j].lifetime:
                raise SolutionError(f"crossbar {j}: reported lifetime {sol.placements[j].lifetime} != {life}")
    if maps is not None:
        overall = _overall(p.lifetime for p in sol.placements.values())
        if overall != sol.lifetime:
            raise SolutionError(f"reported overall lifetime {sol.lifetime} != recomputed {overall}")


def _no_duplicate_keys(pairs):
    out = {}
    for k, v in pairs:
        if k in out:
            raise SolutionError(f"duplicate key {k!r} in solution file")
        out[k] = v
    return out


def solution_from_dict(data: dict, w: Workload, maps: EnduranceMap) -> MappingSolution:
    """Rebuild a solution from its JSON form, recomputing every lifetime."""
    try:
        assign = {str(k): int(v) for k, v in data["assign"].items()}
        per = data["per_crossbar"]
        n_crossbars = int(data.get("hardware", {}).get("n_crossbars", len(per)))
    except (KeyError, TypeError, ValueError) as exc:
        raise SolutionError(f"malformed solution: {exc}") from exc
    by_id = {c.id: c for c in w.clusters}
    seen: dict[str, int] = {}
    merged, placements = {}, {}
    for entry in per:
        j = int(entry["crossbar"])
        if j in placements:
            raise SolutionError(f"crossbar {j} listed twice")
        for cid in entry["clusters"]:
            if cid in seen:
                raise SolutionError(f"cluster {cid!r} appears on crossbars {seen[cid]} and {j}")
            if assign.get(cid) != j:
                raise SolutionError(f"cluster {cid!r} listed on crossbar {j} but assigned to {assign.get(cid)}")
            seen[cid] = j
        if not entry["clusters"]:
            raise SolutionError(f"crossbar {j} has a placement but no clusters")
        try:
            m = merge_all(by_id[c] for c in entry["clusters"])
        except KeyError as exc:
            raise SolutionError(f"unknown cluster {exc.args[0]!r}") from None
        p = placement_from_dict(entry)
        try:
            p.validate(m, maps.M)
        except ValueError as exc:
            raise SolutionError(f"crossbar {j}: {exc}") from exc
        life, limiting = lifetime_of_placement(m, p, maps)
        merged[j] = m
        placements[j] = PlacementResult(m.id, p, life, limiting)
    sol = MappingSolution(assign, n_crossbars, merged, placements, _overall(p.lifetime for p in placements.values()))
    validate_solution(sol, w, maps.M, maps)
    return sol


def load_solution(path, w: Workload, maps: EnduranceMap) -> MappingSolution:
    with open(path) as fh:
        try:
            data = json.load(fh, object_pairs_hook=_no_duplicate_keys)
        except json.JSONDecodeError as exc:
            raise SolutionError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from exc
    return solution_from_dict(data, w, maps)


def placement_for_cluster(sol: MappingSolution, cluster_id: str) -> tuple[Placement, int]:
    j = sol.assign[cluster_id]
    return sol.placements[j].placement, j
