"""Coulomb-counting battery unit model.

All quantities are SI: coulombs, volts, joules, watts, seconds. Capacity is
given in amp-hours only at the configuration boundary.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .errors import NonPositiveCapacity, SocOutOfRange

SECONDS_PER_HOUR = 3600.0


class Mode(enum.Enum):
    DISCHARGING = "discharging"
    CHARGING = "charging"

    @property
    def reference_sign(self) -> int:
        """+1 while the fleet delivers power, -1 while it absorbs it."""
        return 1 if self is Mode.DISCHARGING else -1


@dataclass(frozen=True)
class BatteryUnit:
    capacity_coulombs: float
    voltage: float
    soc: float
    mode: Mode

    @property
    def energy_scale(self) -> float:
        """C * V, the unit state at full charge (discharging) in joules."""
        return self.capacity_coulombs * self.voltage


@dataclass(frozen=True)
class StateBounds:
    """Band [a1, a2] (joules) every unit state must stay inside."""

    a1: float
    a2: float

    def __post_init__(self):
        if not (0.0 < self.a1 < self.a2):
            raise ValueError(f"state bounds need 0 < a1 < a2, got a1={self.a1}, a2={self.a2}")


def unit_from_config(capacity_amp_hours: float, voltage: float, initial_soc: float, mode: Mode) -> BatteryUnit:
    if not capacity_amp_hours > 0:
        raise NonPositiveCapacity(f"capacity must be positive, got {capacity_amp_hours} Ah")
    if not voltage > 0:
        raise ValueError(f"voltage must be positive, got {voltage} V")
    if not 0.0 <= initial_soc <= 1.0:
        raise SocOutOfRange(f"initial SoC {initial_soc} outside [0, 1]")
    return BatteryUnit(
        capacity_coulombs=float(capacity_amp_hours) * SECONDS_PER_HOUR,
        voltage=float(voltage),
        soc=float(initial_soc),
        mode=mode,
    )


def unit_state(u: BatteryUnit) -> float:
    """Energy-like state x_i: C*V*s when discharging, C*V*(1 - s) when charging."""
    if u.mode is Mode.DISCHARGING:
        return u.capacity_coulombs * u.voltage * u.soc
    return u.capacity_coulombs * u.voltage * (1.0 - u.soc)


def state_derivative(u: BatteryUnit, p_i: float) -> float:
    return -p_i if u.mode is Mode.DISCHARGING else p_i


def soc_step(u: BatteryUnit, p_i: float, h: float) -> BatteryUnit:
    """One explicit Euler step of ds/dt = -p / (C V)."""
    if not h > 0:
        raise ValueError(f"step must be positive, got {h}")
    soc = u.soc - h * p_i / (u.capacity_coulombs * u.voltage)
    if not 0.0 <= soc <= 1.0:
        raise SocOutOfRange(f"SoC would move to {soc!r}")
    return replace(u, soc=soc)


def default_bounds(units: Sequence[BatteryUnit], low: float = 0.05, high: float = 0.95) -> StateBounds:
    """Bounds as fractions of the smallest / largest C*V in the fleet."""
    scales = [u.energy_scale for u in units]
    return StateBounds(a1=low * min(scales), a2=high * max(scales))


# Vectorised forms used by the simulation loop. They evaluate exactly the same
# arithmetic as the scalar functions above, element by element.


def fleet_states(energy_scale: np.ndarray, soc: np.ndarray, mode: Mode) -> np.ndarray:
    if mode is Mode.DISCHARGING:
        return energy_scale * soc
    return energy_scale * (1.0 - soc)


def fleet_soc_step(soc: np.ndarray, p: np.ndarray, h: float, energy_scale: np.ndarray) -> np.ndarray:
    return soc - h * p / energy_scale
