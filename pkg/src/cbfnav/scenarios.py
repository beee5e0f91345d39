"""Builtin scenario generators.

``seed=None`` gives the canonical layout of each kind; an integer seed applies
uniform random shifts to starts, goals and obstacles (retrying until the
result validates). Geometry is parameterised, not a reconstruction of any
particular figure.
"""

from __future__ import annotations

import math
from enum import Enum

import numpy as np

from .types import AgentSpec, ObstacleSpec, WorldConfig, Workspace, validate_config

AGENT_RADIUS = 0.15
OBSTACLE_RADIUS = 0.5
MAX_RETRIES = 1000


class ScenarioKind(str, Enum):
    PROOF_OF_CONCEPT = "proof_of_concept"
    NARROW_PASSAGE = "narrow_passage"
    CROSS = "cross"
    SINGULARITY = "singularity"
    GENERALIZATION8 = "generalization8"
    FREE_SPACE = "free_space"

    @classmethod
    def parse(cls, name: str) -> "ScenarioKind":
        key = name.strip().lower().replace("-", "_")
        aliases = {"poc": "proof_of_concept", "proofofconcept": "proof_of_concept",
                   "narrowpassage": "narrow_passage", "gen8": "generalization8",
                   "freespace": "free_space"}
        key = aliases.get(key, key)
        try:
            return cls(key)
        except ValueError:
            raise ValueError(f"unknown scenario kind {name!r}; choose from "
                             f"{', '.join(k.value for k in cls)}") from None


def _build(starts, goals, obstacles, ws, max_steps=500, agent_r=AGENT_RADIUS, obs_r=OBSTACLE_RADIUS):
    agents = tuple(AgentSpec(i, s, g, agent_r) for i, (s, g) in enumerate(zip(starts, goals)))
    obs = tuple(ObstacleSpec(i, c, obs_r) for i, c in enumerate(obstacles))
    return WorldConfig(agents, obs, max_steps=max_steps, workspace=Workspace(*ws))


def _proof_of_concept():
    # the inner gap (0.5 m between surfaces) admits one agent at a time
    starts = [(-1.5, 2.5), (-0.5, 2.5), (0.5, 2.5), (1.5, 2.5)]
    goals = [(-1.5, -2.5), (-0.5, -2.5), (0.5, -2.5), (1.5, -2.5)]
    obstacles = [(-2.1, 0.6), (2.1, 0.6), (-0.75, -0.2), (0.75, -0.2)]
    return starts, goals, obstacles, ((-3.5, -3.5), (3.5, 3.5)), 500


def _narrow_passage():
    # gap between surfaces 0.5 m < two agent diameters (0.6 m)
    starts = [(-0.4, 2.5), (0.4, 2.5), (-0.4, -2.5), (0.4, -2.5)]
    goals = [(0.4, -2.5), (-0.4, -2.5), (0.4, 2.5), (-0.4, 2.5)]
    obstacles = [(-0.75, 0.0), (0.75, 0.0)]
    return starts, goals, obstacles, ((-3.5, -3.5), (3.5, 3.5)), 500


def _cross(n=4, radius=2.0):
    starts, goals = [], []
    for k in range(n):
        a = 2.0 * math.pi * k / n
        starts.append((radius * math.cos(a), radius * math.sin(a)))
        goals.append((-radius * math.cos(a), -radius * math.sin(a)))
    return starts, goals, [], ((-3.0, -3.0), (3.0, 3.0)), 500


def _singularity():
    return [(0.0, 0.0)], [(4.0, 0.0)], [(2.0, 0.0)], ((-1.0, -2.0), (5.0, 2.0)), 500


def _generalization8():
    starts = [(-1.5, 3.5), (-0.5, 3.5), (0.5, 3.5), (1.5, 3.5)]
    goals = [(1.5, -3.5), (0.5, -3.5), (-0.5, -3.5), (-1.5, -3.5)]
    obstacles = [(-2.2, 1.5), (-0.7, 1.3), (0.8, 1.6), (2.3, 1.4),
                 (-1.5, -1.2), (0.0, -1.4), (1.5, -1.1), (-3.0, -0.8)]
    return starts, goals, obstacles, ((-4.5, -4.5), (4.5, 4.5)), 750


def _free_space():
    return [(0.0, 0.0)], [(1.0, 0.0)], [], ((-2.0, -2.0), (2.0, 2.0)), 500


_LAYOUTS = {
    ScenarioKind.PROOF_OF_CONCEPT: (_proof_of_concept, 0.3, 0.0),
    ScenarioKind.NARROW_PASSAGE: (_narrow_passage, 0.2, 0.0),
    ScenarioKind.CROSS: (_cross, 0.2, 0.0),
    ScenarioKind.SINGULARITY: (_singularity, 0.0, 0.0),
    ScenarioKind.GENERALIZATION8: (_generalization8, 0.4, 0.25),
    ScenarioKind.FREE_SPACE: (_free_space, 0.5, 0.0),
}


def make_scenario(kind, seed: int | None = None, shift: float | None = None,
                  obstacle_shift: float | None = None) -> WorldConfig:
    """Build a scenario of ``kind``.

    With a seed, starts and goals move by independent uniform offsets in
    ``[-shift, shift]^2`` and obstacles by ``[-obstacle_shift, obstacle_shift]^2``.
    The Singularity layout has no randomisation by default, since its point is
    exact collinearity.
    """
    kind = ScenarioKind.parse(kind) if isinstance(kind, str) else ScenarioKind(kind)
    layout, dflt_shift, dflt_oshift = _LAYOUTS[kind]
    starts, goals, obstacles, ws, max_steps = layout()
    base = _build(starts, goals, obstacles, ws, max_steps)
    if seed is None:
        assert not validate_config(base), validate_config(base)
        return base
    s = dflt_shift if shift is None else shift
    so = dflt_oshift if obstacle_shift is None else obstacle_shift
    rng = np.random.default_rng(seed)
    S = np.array(starts, dtype=float).reshape(-1, 2)
    G = np.array(goals, dtype=float).reshape(-1, 2)
    O = np.array(obstacles, dtype=float).reshape(-1, 2)
    for _ in range(MAX_RETRIES):
        cfg = _build(S + rng.uniform(-s, s, S.shape), G + rng.uniform(-s, s, G.shape),
                     O + rng.uniform(-so, so, O.shape), ws, max_steps)
        if not validate_config(cfg) and _goals_separated(cfg):
            return cfg
    raise RuntimeError(f"could not generate a valid {kind.value} scenario for seed {seed}")


def _goals_separated(cfg: WorldConfig) -> bool:
    g = cfg.arrays()["goal"]
    r = cfg.arrays()["radius"]
    for i in range(len(g)):
        for j in range(i + 1, len(g)):
            if np.hypot(*(g[i] - g[j])) <= r[i] + r[j]:
                return False
    return True
