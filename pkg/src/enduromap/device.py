"""RRAM read-endurance physics.

HRS cells lose their state as the vertical filament gap closes under read
stress; the gap dynamics are integrated numerically. LRS cells follow a
closed-form exponential law in the applied voltage. Endurance is the
transition time divided by the spike (read) duration.
"""

from __future__ import annotations

import configparser
import enum
import math
from dataclasses import dataclass, fields, replace
from pathlib import Path

import numpy as np

BOLTZMANN_EV = 8.617333262e-5  # eV/K
ELEMENTARY_CHARGE_OVER_BOLTZMANN = 11604.518  # K/V


class ModelError(ValueError):
    """Raised when device parameters or inputs are outside the model's domain."""


class ResistanceState(enum.IntEnum):
    HRS = 0
    LRS1 = 1
    LRS2 = 2
    LRS3 = 3

    @property
    def is_lrs(self) -> bool:
        return self is not ResistanceState.HRS


@dataclass(frozen=True)
class HrsModelParams:
    """Filament-gap model constants (SI units, temperature in kelvin)."""

    nu0: float = 2.5e10
    Ea: float = 1.5
    a0: float = 0.25e-9
    L: float = 5e-9
    gamma0: float = 18.0
    beta: float = 1.25
    g0: float = 1.7e-9
    g_min: float = 0.2e-9
    q_over_k: float = ELEMENTARY_CHARGE_OVER_BOLTZMANN
    horizon: float = 1e12  # seconds; integration stops here

    def validate(self) -> None:
        for name in ("nu0", "Ea", "a0", "L", "gamma0", "g0", "g_min", "q_over_k", "horizon"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise ModelError(f"{name} must be positive and finite, got {value!r}")
        if not self.g_min < self.g0:
            raise ModelError(f"g_min ({self.g_min}) must be smaller than g0 ({self.g0})")
        # gamma is smallest at the widest gap
        if self.gamma(self.g0) <= 0:
            raise ModelError("field-enhancement factor is non-positive at g0; no transition")

    def gamma(self, g):
        return self.gamma0 - self.beta * (g / self.g0) ** 3


@dataclass(frozen=True)
class LrsModelParams:
    slope: float = -14.7
    intercept: float = 6.7


@dataclass(frozen=True)
class SpikeDuration:
    duration: float = 1e-3

    def __post_init__(self):
        if not (math.isfinite(self.duration) and self.duration > 0):
            raise ModelError(f"spike duration must be positive, got {self.duration!r}")


@dataclass(frozen=True)
class DeviceParams:
    hrs: HrsModelParams = HrsModelParams()
    lrs: LrsModelParams = LrsModelParams()
    spike: SpikeDuration = SpikeDuration()


@dataclass(frozen=True)
class HrsTransition:
    time: float
    exceeds_horizon: bool
    steps: int


def _check_voltage(v) -> np.ndarray:
    arr = np.asarray(v, dtype=float)
    if not np.all(np.isfinite(arr)) or np.any(arr <= 0):
        raise ModelError(f"voltage must be positive and finite, got {v!r}")
    return arr


def lrs_transition_time(v, p: LrsModelParams = LrsModelParams()):
    """Seconds until an LRS cell read at ``v`` volts flips. Accepts arrays."""
    arr = _check_voltage(v)
    t = 10.0 ** (p.slope * arr + p.intercept)
    return float(t) if t.ndim == 0 else t


def _gap_rate(g, v, T, p: HrsModelParams):
    kT = BOLTZMANN_EV * T
    field = p.gamma(g) * p.a0 / p.L * v * p.q_over_k / T
    return -p.nu0 * np.exp(-p.Ea / kT) * np.sinh(field)


def integrate_hrs(v, T, p: HrsModelParams = HrsModelParams(), max_rel_step: float = 0.01):
    """Integrate the gap ODE from ``g0`` down to ``g_min`` with adaptive RK4.

    Vectorized over ``v`` (and ``T``, broadcast). Each element carries its own
    step size: the step is sized for a 0.5% relative gap change and halved
    while a trial step moves the gap by more than ``max_rel_step``. The
    crossing of ``g_min`` is located by linear interpolation inside the
    final step.

    Returns ``(times, exceeds_horizon, steps)`` arrays shaped like the
    broadcast of ``v`` and ``T``.
    """
    p.validate()
    v_arr = _check_voltage(v)
    T_arr = np.asarray(T, dtype=float)
    if not np.all(np.isfinite(T_arr)) or np.any(T_arr <= 0):
        raise ModelError(f"temperature must be positive kelvin, got {T!r}")
    v_arr, T_arr = np.broadcast_arrays(v_arr, T_arr)
    shape = v_arr.shape
    v_flat = v_arr.ravel().astype(float)
    T_flat = T_arr.ravel().astype(float)
    n = v_flat.size

    if np.any(_gap_rate(p.g0, v_flat, T_flat, p) >= 0):
        raise ModelError("gap rate is non-negative at g0; the cell never leaves HRS")

    g = np.full(n, p.g0)
    t = np.zeros(n)
    steps = np.zeros(n, dtype=np.int64)
    done = np.zeros(n, dtype=bool)
    saturated = np.zeros(n, dtype=bool)
    target_rel = 0.5 * max_rel_step

    def f(gv, vv, TT):
        return _gap_rate(gv, vv, TT, p)

    while not np.all(done):
        idx = np.flatnonzero(~done)
        gi, vi, Ti, ti = g[idx], v_flat[idx], T_flat[idx], t[idx]
        k1 = f(gi, vi, Ti)
        h = target_rel * gi / np.abs(k1)
        while True:
            k2 = f(gi + 0.5 * h * k1, vi, Ti)
            k3 = f(gi + 0.5 * h * k2, vi, Ti)
            k4 = f(gi + h * k3, vi, Ti)
            dg = h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
            too_big = np.abs(dg) > max_rel_step * gi
            if not np.any(too_big):
                break
            h = np.where(too_big, 0.5 * h, h)
        g_new = gi + dg
        t_new = ti + h
        crossed = g_new <= p.g_min
        frac = np.where(crossed, (gi - p.g_min) / np.where(crossed, gi - g_new, 1.0), 1.0)
        t_new = np.where(crossed, ti + frac * h, t_new)
        over = ~crossed & (t_new >= p.horizon)
        g[idx] = g_new
        t[idx] = np.where(over, p.horizon, t_new)
        steps[idx] += 1
        done[idx] = crossed | over
        saturated[idx] = over

    return t.reshape(shape), saturated.reshape(shape), steps.reshape(shape)


def hrs_transition(v: float, T: float, p: HrsModelParams = HrsModelParams()) -> HrsTransition:
    t, sat, steps = integrate_hrs(v, T, p)
    return HrsTransition(float(t), bool(sat), int(steps))


def hrs_transition_time(v, T, p: HrsModelParams = HrsModelParams()):
    """Seconds until an HRS cell read at ``v`` volts and ``T`` kelvin flips.

    Results that hit the integration horizon are returned as the horizon;
    use :func:`hrs_transition` or :func:`integrate_hrs` to see the flag.
    """
    t, _, _ = integrate_hrs(v, T, p)
    return float(t) if t.ndim == 0 else t


def hrs_closed_form_time(v, T, p: HrsModelParams):
    """Transition time when ``beta == 0`` (constant gap rate)."""
    kT = BOLTZMANN_EV * np.asarray(T, dtype=float)
    arg = p.gamma0 * p.a0 * v * p.q_over_k / (p.L * np.asarray(T, dtype=float))
    return (p.g0 - p.g_min) * np.exp(p.Ea / kT) / (p.nu0 * np.sinh(arg))


def read_endurance(state: ResistanceState, v, T, params: DeviceParams = DeviceParams()):
    """Number of spike reads a cell in ``state`` survives at ``v`` volts."""
    state = ResistanceState(state)
    if state.is_lrs:
        t = lrs_transition_time(v, params.lrs)
    else:
        t = hrs_transition_time(v, T, params.hrs)
    return t / params.spike.duration


# -- parameter file ---------------------------------------------------------

_SECTION = "device"


def _field_owner():
    owners = {}
    for cls in (HrsModelParams, LrsModelParams, SpikeDuration):
        for fld in fields(cls):
            owners[fld.name] = cls
    return owners


def parse_device_params(text: str, base: DeviceParams = DeviceParams()) -> DeviceParams:
    """Parse flat ``key = value`` text; keys are the parameter field names."""
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    parser.optionxform = str
    try:
        parser.read_string(f"[{_SECTION}]\n" + text)
    except configparser.Error as exc:
        raise ModelError(f"cannot parse device parameters: {exc}") from exc
    owners = _field_owner()
    updates: dict[type, dict[str, float]] = {}
    for key, raw in parser[_SECTION].items():
        if key not in owners:
            raise ModelError(f"unknown device parameter {key!r}")
        try:
            value = float(raw)
        except ValueError:
            raise ModelError(f"device parameter {key!r}: not a number: {raw!r}") from None
        updates.setdefault(owners[key], {})[key] = value
    hrs = replace(base.hrs, **updates.get(HrsModelParams, {}))
    lrs = replace(base.lrs, **updates.get(LrsModelParams, {}))
    spike = replace(base.spike, **updates.get(SpikeDuration, {}))
    hrs.validate()
    return DeviceParams(hrs=hrs, lrs=lrs, spike=spike)


def load_device_params(path) -> DeviceParams:
    return parse_device_params(Path(path).read_text())


def format_device_params(params: DeviceParams) -> str:
    lines = []
    for part in (params.hrs, params.lrs, params.spike):
        for fld in fields(part):
            lines.append(f"{fld.name} = {getattr(part, fld.name)!r}")
    return "\n".join(lines) + "\n"
