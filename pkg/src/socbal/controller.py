"""Proportional power allocation: each unit takes a share of the average
desired power in proportion to its own state over the estimated average."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class ControllerConfig:
    denominator_floor: float
    reference_sign: int = 1

    def __post_init__(self):
        if not self.denominator_floor > 0:
            raise ValueError("denominator_floor must be positive")
        if self.reference_sign not in (1, -1):
            raise ValueError("reference_sign must be +1 or -1")


def allocate_power(x_i: float, x_hat_a_i: float, p_hat_a_i: float, cfg: ControllerConfig) -> float:
    return x_i / max(x_hat_a_i, cfg.denominator_floor) * p_hat_a_i


def floor_active(x_hat_a_i: float, cfg: ControllerConfig) -> bool:
    return x_hat_a_i < cfg.denominator_floor


def allocate_powers(x: np.ndarray, x_hat: np.ndarray, p_hat: np.ndarray, cfg: ControllerConfig):
    """Vector form of :func:`allocate_power`; also returns the floor mask."""
    mask = x_hat < cfg.denominator_floor
    return x / np.maximum(x_hat, cfg.denominator_floor) * p_hat, mask
