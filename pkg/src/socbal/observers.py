"""Prespecified-time distributed observers for the average desired power and
the average unit state.

Both observers share the time-varying gain ``omega`` which grows without
bound as ``t`` approaches the deadline ``tb`` and drops back to 1 afterwards.
A discrete integrator cannot follow that blow-up, so the gain is clamped at
``omega_cap``.

Per-node functions take a node index and only read that node's row of the
graph; the ``*_vector`` forms compute the same quantities for every node at
once and are what the simulation loop uses.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import ForbiddenReference, MissingReference, TimeBeforeStart
from .topology import Topology, laplacian


@dataclass(frozen=True)
class GainSchedule:
    t0: float
    tb: float
    psi: float
    r: float
    omega_cap: Optional[float] = None  # None: resolved from the step size at run time

    def __post_init__(self):
        if not self.tb > self.t0:
            raise ValueError(f"deadline tb={self.tb} must come after t0={self.t0}")
        if not (self.psi > 0 and self.r > 0):
            raise ValueError("psi and r must be positive")
        if self.omega_cap is not None and not self.omega_cap >= 1:
            raise ValueError(f"omega_cap must be >= 1, got {self.omega_cap}")

    @property
    def base_gain(self) -> float:
        """psi * r / (tb - t0), the linear gain multiplying omega(t)."""
        return self.psi * self.r / (self.tb - self.t0)


@dataclass(frozen=True)
class PowerObserverParams:
    alpha: float
    schedule: GainSchedule
    sign_layer: Optional[float] = None  # None: scaled default chosen at run time

    def __post_init__(self):
        if self.alpha < 0:
            raise ValueError("alpha must be nonnegative")
        if self.sign_layer is not None and self.sign_layer < 0:
            raise ValueError("sign_layer must be nonnegative")


@dataclass(frozen=True)
class StateObserverParams:
    beta: float
    schedule: GainSchedule
    sign_layer: Optional[float] = None

    def __post_init__(self):
        if self.beta < 0:
            raise ValueError("beta must be nonnegative")
        if self.sign_layer is not None and self.sign_layer < 0:
            raise ValueError("sign_layer must be nonnegative")


@dataclass
class PowerObserverState:
    p_hat: np.ndarray


@dataclass
class StateObserverState:
    q: np.ndarray
    x_hat: np.ndarray


def omega(t: float, g: GainSchedule) -> float:
    if t < g.t0:
        raise TimeBeforeStart(f"t={t} precedes observer start t0={g.t0}")
    if t >= g.tb:
        return 1.0
    w = (g.tb - g.t0) / (g.tb - t)
    if g.omega_cap is not None:
        w = min(g.omega_cap, w)
    return w


def sgn(x: float, delta: Optional[float] = 0.0) -> float:
    """sign(x) with sign(0) = 0, or its saturated-linear boundary-layer form."""
    if not delta:
        return float((x > 0) - (x < 0))
    return min(1.0, max(-1.0, x / delta))


def sgn_vector(x: np.ndarray, delta: Optional[float] = 0.0) -> np.ndarray:
    if not delta:
        return np.sign(x)
    return np.minimum(np.maximum(x / delta, -1.0), 1.0)


def default_power_omega_cap(schedule: GainSchedule, h: float, lambda_max_h: float) -> float:
    """Largest omega for which an Euler step of the linear power-observer
    term is still non-oscillatory on the stiffest mode of H."""
    return max(1.0, (schedule.tb - schedule.t0) / (schedule.psi * schedule.r * h * lambda_max_h))


def default_state_omega_cap(schedule: GainSchedule, h: float, lambda_max_l: float) -> float:
    """Same rule for the state observer, whose linear part acts through L^T L."""
    stiff = lambda_max_l**2
    if stiff == 0.0:
        return math.inf
    return max(1.0, (schedule.tb - schedule.t0) / (schedule.psi * schedule.r * h * stiff))


# -- average desired power ----------------------------------------------------


def power_consensus_signal(i: int, p_hat, topology: Topology, p_a_local: Optional[float] = None) -> float:
    """v_i = sum_j a_ij (p_i - p_j) + b_i (p_i - p_a) for 0-based node ``i``.

    Only pinned units may see the global reference ``p_a``.
    """
    pinned = topology.access_flags[i] == 1
    if pinned and p_a_local is None:
        raise MissingReference(f"unit {i + 1} is pinned but no reference was supplied")
    if not pinned and p_a_local is not None:
        raise ForbiddenReference(f"unit {i + 1} has no access to the total desired power")
    v = 0.0
    for j in topology.neighbors(i):
        v += p_hat[i] - p_hat[j]
    if pinned:
        v += p_hat[i] - p_a_local
    return float(v)


def power_consensus_vector(p_hat: np.ndarray, h: np.ndarray, pinning: np.ndarray, p_a: float) -> np.ndarray:
    """Stacked v = H p_hat - B 1 p_a; ``p_a`` enters pinned rows only."""
    return h @ p_hat - pinning * p_a


def power_observer_derivative(i: int, v_i: float, t: float, params: PowerObserverParams) -> float:
    g = params.schedule
    return -params.alpha * sgn(v_i, params.sign_layer) - g.base_gain * omega(t, g) * v_i


# -- average unit state -------------------------------------------------------


def state_consensus_signal(i: int, x_hat, topology: Topology) -> float:
    """xi_i = sum_j a_ij (x_hat_i - x_hat_j)."""
    xi = 0.0
    for j in topology.neighbors(i):
        xi += x_hat[i] - x_hat[j]
    return float(xi)


def state_observer_q_derivative(i: int, xi_hat_i: float, t: float, params: StateObserverParams) -> float:
    g = params.schedule
    return -params.beta * sgn(xi_hat_i, params.sign_layer) - g.base_gain * omega(t, g) * xi_hat_i


def state_estimates(q, x, topology: Topology) -> np.ndarray:
    """x_hat = L q + x. The entries always sum to sum(x) since 1^T L = 0."""
    q = np.asarray(q, dtype=float)
    x = np.asarray(x, dtype=float)
    if q.shape != (topology.n,) or x.shape != (topology.n,):
        raise ValueError(f"expected length-{topology.n} vectors")
    return laplacian(topology) @ q + x
