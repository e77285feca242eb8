"""Per-cluster synapse placement maximizing the cluster's inference lifetime.

A placement puts each pre-synaptic neuron on a distinct crossbar row and
each post-synaptic neuron on a distinct column. A synapse then occupies the
cell at (row of its pre, column of its post) and lives for
``endurance(cell, state) / spikes`` frames. The cluster lifetime is the
minimum over its synapses, and the solvers maximize that minimum.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .crossbar import EnduranceMap
from .device import ResistanceState
from .seeding import derive_seed
from .workload import Cluster, InfeasibleError, Synapse

# how many of the smallest synapse lifetimes take part in move comparisons
LEXIMIN_DEPTH = 64

DEFAULT_BUDGET = 200
DEFAULT_RESTARTS = 5


class PlacementError(ValueError):
    """A placement does not satisfy the assignment constraints."""


class SizeError(ValueError):
    """An instance is too large for exhaustive enumeration."""


@dataclass(frozen=True)
class Placement:
    row_of: dict[str, int]
    col_of: dict[str, int]

    @classmethod
    def from_arrays(cls, cluster: Cluster, rows, cols) -> "Placement":
        return cls(
            {n.id: int(r) for n, r in zip(cluster.pre, rows)},
            {n.id: int(c) for n, c in zip(cluster.post, cols)},
        )

    def arrays(self, cluster: Cluster) -> tuple[np.ndarray, np.ndarray]:
        try:
            rows = np.array([self.row_of[n.id] for n in cluster.pre], dtype=np.intp)
            cols = np.array([self.col_of[n.id] for n in cluster.post], dtype=np.intp)
        except KeyError as exc:
            raise PlacementError(f"cluster {cluster.id!r}: neuron {exc.args[0]!r} is not placed") from None
        return rows, cols

    def validate(self, cluster: Cluster, M: int) -> None:
        rows, cols = self.arrays(cluster)
        for name, arr in (("row", rows), ("column", cols)):
            if arr.size and (arr.min() < 0 or arr.max() >= M):
                raise PlacementError(f"cluster {cluster.id!r}: {name} index outside [0, {M})")
            if len(set(arr.tolist())) != arr.size:
                raise PlacementError(f"cluster {cluster.id!r}: two neurons share a {name}")

    def cell_of(self, s: Synapse) -> tuple[int, int]:
        return self.row_of[s.pre], self.col_of[s.post]


@dataclass
class PlacementResult:
    cluster_id: str
    placement: Placement
    lifetime: float
    limiting_synapse: tuple[str, str] | None
    solver_stats: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "cluster_id": self.cluster_id,
            "rows": dict(sorted(self.placement.row_of.items())),
            "cols": dict(sorted(self.placement.col_of.items())),
            "lifetime": _finite_or_none(self.lifetime),
            "limiting_synapse": list(self.limiting_synapse) if self.limiting_synapse else None,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


def _finite_or_none(x: float):
    return float(x) if math.isfinite(x) else None


def placement_from_dict(data: dict) -> Placement:
    return Placement({str(k): int(v) for k, v in data["rows"].items()},
                     {str(k): int(v) for k, v in data["cols"].items()})


# -- objective --------------------------------------------------------------------

def synapse_lifetime(s: Synapse, spikes: float, cell: tuple[int, int], maps: EnduranceMap) -> float:
    """Frames a synapse survives on ``cell``; never-read synapses last forever."""
    if spikes < 0:
        raise ValueError("spike count must be non-negative")
    if spikes == 0:
        return math.inf
    k, l = cell
    return float(maps.grid_for(s.state)[k, l]) / spikes


def equivalent_spikes(state: ResistanceState, spikes: float, cell: tuple[int, int], maps: EnduranceMap) -> float:
    """Spike count an HRS synapse would need to match this synapse's lifetime on ``cell``."""
    if not ResistanceState(state).is_lrs:
        return spikes
    k, l = cell
    return spikes * maps.hrs[k, l] / maps.lrs[k, l]


class _Objective:
    """Vectorized lifetime evaluation for one cluster on one endurance map."""

    def __init__(self, cluster: Cluster, maps: EnduranceMap):
        self.cluster = cluster
        self.M = maps.M
        self.P, self.Q = cluster.size
        if self.P > self.M or self.Q > self.M:
            raise InfeasibleError(
                f"cluster {cluster.id!r} ({self.P}x{self.Q}) does not fit a {self.M}x{self.M} crossbar")
        self.si, self.sj, self.spk, self.lrs = cluster.arrays()
        self.S = self.si.size
        self.EH = maps.hrs
        self.EL = maps.lrs
        # both grids flattened into one table, LRS synapses offset by M*M
        self._table = np.concatenate([maps.hrs.ravel(), maps.lrs.ravel()])
        self._offset = self.lrs.astype(np.intp) * self.M * self.M

    def synapse_lifetimes(self, rows, cols) -> np.ndarray:
        """Lifetimes per synapse; ``rows``/``cols`` may carry a leading batch axis."""
        r = np.take(rows, self.si, axis=-1)
        c = np.take(cols, self.sj, axis=-1)
        # true division keeps lifetimes bit-identical to endurance / spikes
        with np.errstate(divide="ignore"):
            return self._table[r * self.M + c + self._offset] / self.spk

    def evaluate(self, rows, cols) -> tuple[float, tuple[str, str] | None]:
        L = self.synapse_lifetimes(rows, cols)
        if L.size == 0 or not np.isfinite(L.min()):
            return math.inf, None
        t = int(np.argmin(L))
        s = self.cluster.synapses[t]
        return float(L[t]), (s.pre, s.post)


def lifetime_of_placement(c: Cluster, p: Placement, maps: EnduranceMap) -> tuple[float, tuple[str, str] | None]:
    p.validate(c, maps.M)
    obj = _Objective(c, maps)
    rows, cols = p.arrays(c)
    return obj.evaluate(rows, cols)


def _leximin_key(L: np.ndarray, depth: int = LEXIMIN_DEPTH) -> np.ndarray:
    """Smallest ``depth`` lifetimes in ascending order (last axis)."""
    k = min(depth, L.shape[-1])
    if k == 0:
        return L[..., :0]
    if k < L.shape[-1]:
        L = np.partition(L, k - 1, axis=-1)[..., :k]
    return np.sort(L, axis=-1)


def _lex_greater(a: np.ndarray, b: np.ndarray) -> bool:
    diff = np.flatnonzero(a != b)
    return bool(diff.size) and bool(a[diff[0]] > b[diff[0]])


# -- exact oracle -------------------------------------------------------------------

MAX_ENUMERATION = 2_000_000


def _n_injections(M: int, n: int) -> int:
    return math.perm(M, n)


def brute_force_place(c: Cluster, maps: EnduranceMap, max_side: int = 6, max_enumeration: int = MAX_ENUMERATION) -> PlacementResult:
    """Exhaustive search over all injective row and column assignments.

    Ties go to the lexicographically smallest (row vector, column vector),
    vectors being ordered like ``c.pre`` / ``c.post``.
    """
    obj = _Objective(c, maps)
    M, P, Q = obj.M, obj.P, obj.Q
    total = _n_injections(M, P) * _n_injections(M, Q)
    if P > max_side or Q > max_side or total > max_enumeration:
        raise SizeError(
            f"cluster {c.id!r}: {total} placements exceed the enumeration bound; use optimize_placement")

    col_perms = np.array(list(itertools.permutations(range(M), Q)), dtype=np.intp).reshape(-1, Q)
    best_val = -math.inf
    best = None
    rows_idx = np.arange(obj.S)
    for rows in itertools.permutations(range(M), P):
        r = np.asarray(rows, dtype=np.intp)
        if obj.S == 0:
            best, best_val = (r, col_perms[0]), math.inf
            break
        # endurance of every synapse for every column of its row
        A = np.where(obj.lrs[:, None], obj.EL[r[obj.si]], obj.EH[r[obj.si]])
        with np.errstate(divide="ignore"):
            A = np.where(obj.spk[:, None] > 0, A / np.where(obj.spk > 0, obj.spk, 1.0)[:, None], np.inf)
        vals = A[rows_idx[None, :], col_perms[:, obj.sj]].min(axis=1)
        i = int(np.argmax(vals))
        if vals[i] > best_val:
            best_val, best = float(vals[i]), (r, col_perms[i])
        if best_val == math.inf:
            break
    rows, cols = best
    lifetime, limiting = obj.evaluate(rows, cols)
    return PlacementResult(
        c.id, Placement.from_arrays(c, rows, cols), lifetime, limiting,
        {"iterations": int(total), "restarts": 0, "oracle_used": True},
    )


# -- heuristic solver -----------------------------------------------------------------

def greedy_placement(c: Cluster, maps: EnduranceMap) -> tuple[np.ndarray, np.ndarray]:
    """Busiest synapses first, each onto the best still-free compatible cell."""
    obj = _Objective(c, maps)
    M = obj.M
    rows = np.full(obj.P, -1, dtype=np.intp)
    cols = np.full(obj.Q, -1, dtype=np.intp)
    free_r = np.ones(M, dtype=bool)
    free_c = np.ones(M, dtype=bool)
    order = sorted(range(obj.S), key=lambda t: (-obj.spk[t], t))
    for t in order:
        i, j = obj.si[t], obj.sj[t]
        E = obj.EL if obj.lrs[t] else obj.EH
        if rows[i] >= 0 and cols[j] >= 0:
            continue
        if rows[i] >= 0:
            cand = np.where(free_c, E[rows[i]], -np.inf)
            cols[j] = int(np.argmax(cand))
        elif cols[j] >= 0:
            cand = np.where(free_r, E[:, cols[j]], -np.inf)
            rows[i] = int(np.argmax(cand))
        else:
            cand = np.where(free_r[:, None] & free_c[None, :], E, -np.inf)
            k, l = np.unravel_index(int(np.argmax(cand)), cand.shape)
            rows[i], cols[j] = k, l
        free_r[rows[i]] = False
        free_c[cols[j]] = False
    for arr, free in ((rows, free_r), (cols, free_c)):
        for i in np.flatnonzero(arr < 0):
            port = int(np.flatnonzero(free)[0])
            arr[i] = port
            free[port] = False
    return rows, cols


def _random_placement(obj: _Objective, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    rows = rng.permutation(obj.M)[: obj.P].astype(np.intp)
    cols = rng.permutation(obj.M)[: obj.Q].astype(np.intp)
    return rows, cols


def _owners(assign: np.ndarray, M: int) -> np.ndarray:
    owner = np.full(M, -1, dtype=np.intp)
    owner[assign] = np.arange(assign.size)
    return owner


def _port_moves(assign: np.ndarray, movers, M: int) -> np.ndarray:
    """Assignments obtained by moving each neuron in ``movers`` to every other port.

    An occupied target port swaps its neuron into the vacated one.
    """
    movers = np.asarray(movers, dtype=np.intp)
    if movers.size == 0 or M < 2:
        return np.zeros((0, assign.size), dtype=np.intp)
    owner = _owners(assign, M)
    mi = np.repeat(movers, M)
    port = np.tile(np.arange(M), movers.size)
    keep = port != assign[mi]
    mi, port = mi[keep], port[keep]
    n = mi.size
    out = np.tile(assign, (n, 1))
    k = np.arange(n)
    displaced = owner[port]
    swap = displaced >= 0
    out[k[swap], displaced[swap]] = assign[mi[swap]]
    out[k, mi] = port
    return out


def _descend(obj: _Objective, rows, cols, L, key, budget: int, trace: list):
    """Best-improvement descent on the leximin order of synapse lifetimes.

    Only moves that relocate a neuron of a currently limiting synapse can
    raise the minimum, so those are tried first; when none of them improves,
    moves of every neuron touching the compared tail are scanned.
    """
    it = 0
    while it < budget and np.isfinite(key[0]):
        it += 1
        limiting = np.flatnonzero(L == key[0])
        best = _scan(obj, rows, cols, np.unique(obj.si[limiting]), np.unique(obj.sj[limiting]), key)
        if best is None:
            # a move can only lift the key if it touches one of its synapses
            low = np.flatnonzero(L <= key[-1])
            best = _scan(obj, rows, cols, np.unique(obj.si[low]), np.unique(obj.sj[low]), key)
        if best is None:
            break
        _, (kind, cands), idx = best
        if kind == "row":
            rows = cands[idx].copy()
        else:
            cols = cands[idx].copy()
        L = obj.synapse_lifetimes(rows, cols)
        key = _leximin_key(L)
        trace.append(max(trace[-1], float(key[0])))
    return rows, cols, L, key, it


def _kick(obj: _Objective, rows, cols, rng: np.random.Generator):
    """Random relocation of one pre and one post neuron (swapping if occupied)."""
    rows, cols = rows.copy(), cols.copy()
    for assign in (rows, cols):
        if assign.size == 0 or obj.M < 2:
            continue
        owner = _owners(assign, obj.M)
        i = int(rng.integers(assign.size))
        port = int(rng.integers(obj.M - 1))
        port += port >= assign[i]
        if owner[port] >= 0:
            assign[owner[port]] = assign[i]
        assign[i] = port
    return rows, cols


def _local_search(obj: _Objective, rows, cols, budget: int, rng: np.random.Generator, kick_patience: int = 4):
    """Descent plus random kicks from the incumbent until ``budget`` is spent.

    Kicks stop after ``kick_patience`` in a row fail to beat the incumbent.
    Returns the incumbent and its best-so-far minimum-lifetime trace.
    """
    L = obj.synapse_lifetimes(rows, cols)
    key = _leximin_key(L)
    if L.size == 0:
        return rows, cols, key, [math.inf], 0
    trace = [float(key[0])]
    rows, cols, L, key, used = _descend(obj, rows, cols, L, key, budget, trace)
    failures = 0
    while used < budget and failures < kick_patience and np.isfinite(key[0]):
        used += 1
        r2, c2 = _kick(obj, rows, cols, rng)
        L2 = obj.synapse_lifetimes(r2, c2)
        k2 = _leximin_key(L2)
        sub = [trace[-1]]
        r2, c2, L2, k2, it = _descend(obj, r2, c2, L2, k2, budget - used, sub)
        used += it
        if _lex_greater(k2, key):
            rows, cols, L, key = r2, c2, L2, k2
            trace.append(float(key[0]))
            failures = 0
        else:
            failures += 1
    return rows, cols, key, trace, used


def _scan(obj: _Objective, rows, cols, pre_movers, post_movers, current):
    best = None
    row_cands = _port_moves(rows, pre_movers, obj.M)
    if len(row_cands):
        L = obj.synapse_lifetimes(row_cands, np.broadcast_to(cols, (len(row_cands), cols.size)))
        best = _best_candidate(_leximin_key(L), current, best, ("row", row_cands))
    col_cands = _port_moves(cols, post_movers, obj.M)
    if len(col_cands):
        L = obj.synapse_lifetimes(np.broadcast_to(rows, (len(col_cands), rows.size)), col_cands)
        best = _best_candidate(_leximin_key(L), current, best, ("col", col_cands))
    return best


def _best_candidate(keys: np.ndarray, current: np.ndarray, best, tag):
    """Fold the lexicographically largest of ``keys`` that beats ``current`` into ``best``."""
    diff = keys != current
    first = np.argmax(diff, axis=1)
    rows = np.arange(keys.shape[0])
    better = diff[rows, first] & (keys[rows, first] > current[first])
    cand = np.flatnonzero(better)
    if cand.size == 0:
        return best
    for d in range(keys.shape[1]):
        col = keys[cand, d]
        cand = cand[col == col.max()]
        if cand.size == 1:
            break
    idx = int(cand[0])
    if best is None or _lex_greater(keys[idx], best[0]):
        return keys[idx], tag, idx
    return best


def optimize_placement(
    c: Cluster,
    maps: EnduranceMap,
    budget: int = DEFAULT_BUDGET,
    restarts: int = DEFAULT_RESTARTS,
    seed: int = 0,
) -> PlacementResult:
    """Local search from a greedy start plus ``restarts`` random starts.

    ``budget`` caps improving moves per start. Random starts draw from
    streams derived from ``seed`` and the start index, so a larger budget
    extends (never alters) each start's trajectory.
    """
    obj = _Objective(c, maps)
    starts = [greedy_placement(c, maps)]
    for r in range(restarts):
        starts.append(_random_placement(obj, np.random.default_rng(derive_seed(seed, c.id, r))))

    best = None
    iterations = 0
    traces = []
    greedy_lifetime = None
    for r, (rows, cols) in enumerate(starts):
        rng = np.random.default_rng(derive_seed(seed, c.id, "kick", r))
        rows, cols, key, trace, it = _local_search(obj, rows, cols, budget, rng)
        iterations += it
        traces.append(trace)
        if greedy_lifetime is None:
            greedy_lifetime = trace[0]
        if best is None or _lex_greater(key, best[0]):
            best = (key, rows, cols)
    _, rows, cols = best
    lifetime, limiting = obj.evaluate(rows, cols)
    return PlacementResult(
        c.id, Placement.from_arrays(c, rows, cols), lifetime, limiting,
        {
            "iterations": iterations,
            "restarts": restarts,
            "oracle_used": False,
            "greedy_lifetime": greedy_lifetime,
            "traces": traces,
        },
    )


def place(c: Cluster, maps: EnduranceMap, exact: bool = False, **kwargs) -> PlacementResult:
    if exact:
        return brute_force_place(c, maps)
    return optimize_placement(c, maps, **kwargs)


def random_placement(c: Cluster, maps: EnduranceMap, rng: np.random.Generator) -> PlacementResult:
    obj = _Objective(c, maps)
    rows, cols = _random_placement(obj, rng)
    lifetime, limiting = obj.evaluate(rows, cols)
    return PlacementResult(c.id, Placement.from_arrays(c, rows, cols), lifetime, limiting,
                           {"iterations": 0, "restarts": 0, "oracle_used": False})
