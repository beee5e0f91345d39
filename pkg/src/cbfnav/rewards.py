"""Per-agent step reward: progress towards the goal plus a QP-infeasibility penalty."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class RewardConfig:
    beta: float = 1.0
    r_qp_penalty: float = -1.0
    gamma: float = 0.99

    def __post_init__(self):
        if self.beta < 0:
            raise ValueError("beta must be nonnegative")
        if self.r_qp_penalty > 0:
            raise ValueError("r_qp_penalty must be <= 0")
        if not 0 < self.gamma <= 1:
            raise ValueError("gamma must lie in (0, 1]")


def reward(prev_position, goal, applied_u, feasible: bool, cfg: RewardConfig = RewardConfig()) -> float:
    """``unit(goal - p) . u`` plus ``beta * r_qp_penalty`` on an infeasible step.

    The progress term is the goal-direction component of the velocity; it is
    zero at the goal and for a zero control.
    """
    gx = float(goal[0]) - float(prev_position[0])
    gy = float(goal[1]) - float(prev_position[1])
    dist = math.sqrt(gx * gx + gy * gy)
    progress = 0.0 if dist == 0.0 else (gx * float(applied_u[0]) + gy * float(applied_u[1])) / dist
    if not feasible:
        progress += cfg.beta * cfg.r_qp_penalty
    return progress


def step_rewards(pos: np.ndarray, goal: np.ndarray, u: np.ndarray, feasible: np.ndarray,
                 cfg: RewardConfig) -> np.ndarray:
    """Vectorised :func:`reward` over agents."""
    g = goal - pos
    dist = np.sqrt(g[:, 0] * g[:, 0] + g[:, 1] * g[:, 1])
    num = g[:, 0] * u[:, 0] + g[:, 1] * u[:, 1]
    safe = np.where(dist == 0.0, 1.0, dist)
    progress = np.where(dist == 0.0, 0.0, num / safe)
    return progress + np.where(feasible, 0.0, cfg.beta * cfg.r_qp_penalty)
