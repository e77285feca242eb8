"""Crossbar parasitic network, per-cell voltage, endurance and delay maps.

Geometry: wordlines are driven from the left (column 0 side) and bitlines
are sensed at the bottom (row M-1 side). Cell (k, l) sits at row k, column
l, so (M-1, 0) is the electrically shortest cell and (0, M-1) the longest.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .device import DeviceParams, ResistanceState, read_endurance

SUPPORTED_NODES = (65, 45, 32, 16)

# Ohms per electrode segment. 65 and 16 nm are the published corners; the
# middle nodes are the interpolated defaults.
UNIT_PARASITIC_RESISTANCE = {65: 1.0, 45: 1.6, 32: 2.4, 16: 3.8}

REFERENCE_TEMPERATURE = 25.0

# Weakest-cell voltage targeted by drive calibration. Together with the
# default cell and sense resistances this puts the all-LRS peak cell voltage
# of a 128x128 crossbar at ~0.57 V (65 nm) and ~1.1 V (16 nm).
DEFAULT_READ_MARGIN = 0.388


class NumericalError(RuntimeError):
    """The nodal system could not be solved."""


def interpolated_parasitic_resistance(node_nm: float) -> float:
    """Log-linear interpolation of unit resistance between 65 nm and 16 nm."""
    lo, hi = 16.0, 65.0
    r_lo, r_hi = UNIT_PARASITIC_RESISTANCE[16], UNIT_PARASITIC_RESISTANCE[65]
    frac = (node_nm - hi) / (lo - hi)
    return float(math.exp(math.log(r_hi) + frac * (math.log(r_lo) - math.log(r_hi))))


@dataclass(frozen=True)
class TechnologyNode:
    node: int = 45
    unit_parasitic_resistance: float | None = None

    def __post_init__(self):
        if self.unit_parasitic_resistance is None:
            r = UNIT_PARASITIC_RESISTANCE.get(self.node)
            if r is None:
                r = interpolated_parasitic_resistance(self.node)
            object.__setattr__(self, "unit_parasitic_resistance", r)
        if not self.unit_parasitic_resistance >= 0:
            raise ValueError("unit parasitic resistance must be non-negative")


@dataclass(frozen=True)
class CrossbarConfig:
    M: int = 128
    tech: TechnologyNode = field(default_factory=TechnologyNode)
    temperature: float = REFERENCE_TEMPERATURE  # degrees C
    drive_voltage: float = 1.0
    cell_on_resistance: float = 2.5e4
    cell_off_resistance: float = 2.5e6
    sense_resistance: float = 290.0
    leakage_coefficient: float = 0.002  # per degree C
    temperature_bounds: tuple[float, float] = (0.0, 100.0)

    def __post_init__(self):
        if self.M < 1:
            raise ValueError(f"crossbar dimension must be >= 1, got {self.M}")
        if not self.drive_voltage > 0:
            raise ValueError(f"drive voltage must be positive, got {self.drive_voltage}")
        if not self.cell_off_resistance > self.cell_on_resistance > 0:
            raise ValueError("need cell_off_resistance > cell_on_resistance > 0")
        if not self.sense_resistance >= 0:
            raise ValueError("sense resistance must be non-negative")

    @property
    def kelvin(self) -> float:
        return self.temperature + 273.15

    def resistance_of(self, state: ResistanceState) -> float:
        return self.cell_on_resistance if ResistanceState(state).is_lrs else self.cell_off_resistance

    def metadata(self) -> dict:
        return {
            "M": self.M,
            "node_nm": self.tech.node,
            "unit_parasitic_resistance": self.tech.unit_parasitic_resistance,
            "temperature_c": self.temperature,
            "drive_voltage": self.drive_voltage,
            "effective_drive_voltage": temperature_adjusted_drive(self),
            "cell_on_resistance": self.cell_on_resistance,
            "cell_off_resistance": self.cell_off_resistance,
            "sense_resistance": self.sense_resistance,
            "leakage_coefficient": self.leakage_coefficient,
        }


def temperature_adjusted_drive(cfg: CrossbarConfig) -> float:
    lo, hi = cfg.temperature_bounds
    t = min(max(cfg.temperature, lo), hi)
    return cfg.drive_voltage * (1.0 + cfg.leakage_coefficient * (t - REFERENCE_TEMPERATURE))


@dataclass(frozen=True)
class VoltageMap:
    grid: np.ndarray
    residual: float = 0.0  # worst nodal current imbalance / total drive current

    @property
    def spread(self) -> float:
        return float(self.grid.max() - self.grid.min())


@dataclass(frozen=True)
class EnduranceMap:
    hrs: np.ndarray
    lrs: np.ndarray

    @property
    def M(self) -> int:
        return self.hrs.shape[0]

    def grid_for(self, state: ResistanceState) -> np.ndarray:
        return self.lrs if ResistanceState(state).is_lrs else self.hrs

    @classmethod
    def uniform(cls, M: int, hrs: float, lrs: float | None = None) -> "EnduranceMap":
        lrs = hrs if lrs is None else lrs
        return cls(np.full((M, M), float(hrs)), np.full((M, M), float(lrs)))


@dataclass(frozen=True)
class DelayMap:
    grid: np.ndarray
    base_delay: float
    per_segment_delay: float


def _state_grid(cfg: CrossbarConfig, states) -> np.ndarray:
    M = cfg.M
    if isinstance(states, ResistanceState):
        return np.full((M, M), cfg.resistance_of(states))
    arr = np.asarray(states)
    if arr.shape != (M, M):
        raise ValueError(f"state grid shape {arr.shape} does not match M={M}")
    r = np.where(arr == int(ResistanceState.HRS), cfg.cell_off_resistance, cfg.cell_on_resistance)
    return r.astype(float)


def _check_resistances(r_cell: np.ndarray) -> None:
    bad = np.argwhere(~(np.isfinite(r_cell) & (r_cell > 0)))
    if bad.size:
        k, l = bad[0]
        raise NumericalError(f"cell ({k}, {l}) has non-positive or non-finite resistance {r_cell[k, l]!r}")


def _solve_ideal_wires(r_cell: np.ndarray, v_in: float, r_sense: float) -> VoltageMap:
    # zero wire resistance: every wordline sits at v_in, each bitline is one node
    g_cell = 1.0 / r_cell
    g_col = g_cell.sum(axis=0)
    if r_sense == 0:
        v_bit = np.zeros_like(g_col)
    else:
        v_bit = v_in * g_col / (g_col + 1.0 / r_sense)
    return VoltageMap(np.broadcast_to(v_in - v_bit, r_cell.shape).copy(), 0.0)


def solve_voltage_map(cfg: CrossbarConfig, states=ResistanceState.LRS1, resistances=None) -> VoltageMap:
    """Nodal analysis of the 2*M*M-node crossbar ladder.

    ``states`` is a single state (uniform programming) or an MxM grid of
    states; ``resistances`` overrides both with an explicit MxM ohm grid.
    Returns the wordline-minus-bitline voltage of every cell.
    """
    M = cfg.M
    r_cell = np.asarray(resistances, dtype=float) if resistances is not None else _state_grid(cfg, states)
    if r_cell.shape != (M, M):
        raise ValueError(f"resistance grid shape {r_cell.shape} does not match M={M}")
    _check_resistances(r_cell)
    v_in = temperature_adjusted_drive(cfg)
    r_p = cfg.tech.unit_parasitic_resistance
    if r_p == 0:
        return _solve_ideal_wires(r_cell, v_in, cfg.sense_resistance)

    n = M * M
    g_p = 1.0 / r_p
    g_out = 1.0 / (r_p + cfg.sense_resistance)
    idx = np.arange(n).reshape(M, M)
    w = idx
    b = idx + n
    g_cell = (1.0 / r_cell).ravel()

    rows, cols, vals = [], [], []

    def branch(a, c, g):
        rows.extend((a, c, a, c))
        cols.extend((a, c, c, a))
        vals.extend((g, g, -g, -g))

    branch(w.ravel(), b.ravel(), g_cell)
    gw = np.full(M * (M - 1), g_p)
    branch(w[:, :-1].ravel(), w[:, 1:].ravel(), gw)
    branch(b[:-1, :].ravel(), b[1:, :].ravel(), gw)
    diag = np.zeros(2 * n)
    diag[w[:, 0]] += g_p
    diag[b[-1, :]] += g_out
    rows.append(np.arange(2 * n))
    cols.append(np.arange(2 * n))
    vals.append(diag)

    G = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(2 * n, 2 * n)
    ).tocsc()
    rhs = np.zeros(2 * n)
    rhs[w[:, 0]] = g_p * v_in

    try:
        x = splu(G).solve(rhs)
    except RuntimeError as exc:
        raise NumericalError(f"singular crossbar network (M={M}): {exc}") from exc
    if not np.all(np.isfinite(x)):
        raise NumericalError(f"non-finite node voltages for crossbar (M={M})")

    drive_current = float(np.sum(g_p * (v_in - x[w[:, 0]])))
    residual = np.abs(G @ x - rhs).max() / drive_current if drive_current > 0 else 0.0
    grid = x[:n].reshape(M, M) - x[n:].reshape(M, M)
    return VoltageMap(grid, float(residual))


def calibrate_drive(cfg: CrossbarConfig, read_margin: float = DEFAULT_READ_MARGIN, state=ResistanceState.LRS1) -> CrossbarConfig:
    """Return ``cfg`` with the 25 C drive set so the weakest cell sees ``read_margin`` volts.

    The network is linear in the drive, so one unit-drive solve suffices.
    """
    unit = replace(cfg, drive_voltage=1.0, temperature=REFERENCE_TEMPERATURE)
    vmin = float(solve_voltage_map(unit, state).grid.min())
    return replace(cfg, drive_voltage=read_margin / vmin)


def default_config(node: int = 45, M: int = 128, temperature: float = REFERENCE_TEMPERATURE, **kwargs) -> CrossbarConfig:
    """A crossbar at ``node`` with the drive calibrated for the default read margin."""
    read_margin = kwargs.pop("read_margin", DEFAULT_READ_MARGIN)
    cfg = CrossbarConfig(M=M, tech=TechnologyNode(node), temperature=temperature, **kwargs)
    return calibrate_drive(cfg, read_margin)


def build_endurance_maps(
    cfg: CrossbarConfig,
    params: DeviceParams = DeviceParams(),
    voltages: dict[str, VoltageMap] | None = None,
    hrs_basis: str = "inference",
) -> EnduranceMap:
    """Per-cell read endurance for HRS- and LRS-programmed cells.

    LRS endurance is evaluated on the all-LRS voltage map. ``hrs_basis``
    selects the voltages used for HRS endurance: ``"inference"`` reuses the
    all-LRS map (the crossbar as it is read during inference), ``"uniform"``
    solves a separate all-HRS crossbar. An all-HRS crossbar carries almost
    no current, so its cells all sit near the full drive voltage.
    """
    if voltages is None:
        voltages = build_voltage_maps(cfg, include_hrs=hrs_basis == "uniform")
    if hrs_basis == "inference":
        v_hrs = voltages["lrs"].grid
    elif hrs_basis == "uniform":
        v_hrs = voltages["hrs"].grid
    else:
        raise ValueError(f"unknown hrs_basis {hrs_basis!r}")
    T = cfg.kelvin
    hrs = read_endurance(ResistanceState.HRS, v_hrs, T, params)
    lrs = read_endurance(ResistanceState.LRS1, voltages["lrs"].grid, T, params)
    return EnduranceMap(np.asarray(hrs, dtype=float), np.asarray(lrs, dtype=float))


def build_voltage_maps(cfg: CrossbarConfig, include_hrs: bool = True) -> dict[str, VoltageMap]:
    maps = {"lrs": solve_voltage_map(cfg, ResistanceState.LRS1)}
    if include_hrs:
        maps["hrs"] = solve_voltage_map(cfg, ResistanceState.HRS)
    return maps


def default_per_segment_delay(M: int, base_delay: float = 0.1, ratio: float = 1.25, reference_M: int = 128) -> float:
    """Per-segment delay giving a longest/shortest ratio of ``ratio`` at ``reference_M``."""
    return base_delay * (ratio - 1.0) / (2 * (reference_M - 1))


def path_segments(M: int) -> np.ndarray:
    k = np.arange(M)[:, None]
    l = np.arange(M)[None, :]
    return (M - 1 - k) + l


def build_delay_map(cfg: CrossbarConfig, base_delay: float = 0.1, per_segment_delay: float | None = None) -> DelayMap:
    if per_segment_delay is None:
        per_segment_delay = default_per_segment_delay(cfg.M, base_delay)
    grid = base_delay + per_segment_delay * path_segments(cfg.M)
    return DelayMap(grid.astype(float), base_delay, per_segment_delay)


# -- export -----------------------------------------------------------------

def write_grid_csv(path, grid: np.ndarray) -> None:
    with open(path, "w", newline="") as fh:
        for row in np.asarray(grid, dtype=float):
            fh.write(",".join(repr(float(x)) for x in row) + "\n")


def read_grid_csv(path) -> np.ndarray:
    return np.loadtxt(path, delimiter=",", ndmin=2)


def export_map(path, grid: np.ndarray, cfg: CrossbarConfig, kind: str, **extra) -> None:
    """Write ``<path>.csv`` and a ``<path>.json`` metadata sidecar."""
    path = Path(path)
    write_grid_csv(path.with_suffix(".csv"), grid)
    meta = {
        "kind": kind,
        **cfg.metadata(),
        "min": float(np.min(grid)),
        "max": float(np.max(grid)),
        "argmin": [int(i) for i in np.unravel_index(np.argmin(grid), grid.shape)],
        "argmax": [int(i) for i in np.unravel_index(np.argmax(grid), grid.shape)],
        **extra,
    }
    path.with_suffix(".json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
