"""Shared domain types, scenario-file IO and elementary geometry."""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

DEFAULT_ZETA_BOUNDS = (0.1, 10.0)
DEFAULT_ETA_BOUNDS = (1.0, 2.0)


class ConfigError(ValueError):
    """Malformed configuration or scenario file."""


def _vec2(v) -> tuple[float, float]:
    a, b = v
    return (float(a), float(b))


@dataclass(frozen=True)
class AgentSpec:
    id: int
    start: tuple[float, float]
    goal: tuple[float, float]
    radius: float

    def __post_init__(self):
        object.__setattr__(self, "start", _vec2(self.start))
        object.__setattr__(self, "goal", _vec2(self.goal))
        object.__setattr__(self, "radius", float(self.radius))


@dataclass(frozen=True)
class AgentState:
    """Position and the most recently applied control (used as velocity)."""

    position: tuple[float, float]
    velocity: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        object.__setattr__(self, "position", _vec2(self.position))
        object.__setattr__(self, "velocity", _vec2(self.velocity))


@dataclass(frozen=True)
class ObstacleSpec:
    id: int
    center: tuple[float, float]
    radius: float

    def __post_init__(self):
        object.__setattr__(self, "center", _vec2(self.center))
        object.__setattr__(self, "radius", float(self.radius))


@dataclass(frozen=True)
class Workspace:
    min: tuple[float, float]
    max: tuple[float, float]

    def __post_init__(self):
        object.__setattr__(self, "min", _vec2(self.min))
        object.__setattr__(self, "max", _vec2(self.max))

    def contains(self, p) -> bool:
        return self.min[0] <= p[0] <= self.max[0] and self.min[1] <= p[1] <= self.max[1]


@dataclass(frozen=True)
class WorldConfig:
    agents: tuple[AgentSpec, ...]
    obstacles: tuple[ObstacleSpec, ...]
    sensing_radius: float = 2.0
    dt: float = 0.05
    max_steps: int = 500
    u_max: float = 0.5
    workspace: Workspace = field(default_factory=lambda: Workspace((-5.0, -5.0), (5.0, 5.0)))

    def __post_init__(self):
        object.__setattr__(self, "agents", tuple(self.agents))
        object.__setattr__(self, "obstacles", tuple(self.obstacles))

    @property
    def n_agents(self) -> int:
        return len(self.agents)

    def arrays(self) -> dict[str, np.ndarray]:
        """Contiguous float64 views used by the simulator and the kernels."""
        obs = np.array([o.center for o in self.obstacles], dtype=float).reshape(-1, 2)
        return {
            "start": np.array([a.start for a in self.agents], dtype=float).reshape(-1, 2),
            "goal": np.array([a.goal for a in self.agents], dtype=float).reshape(-1, 2),
            "radius": np.array([a.radius for a in self.agents], dtype=float),
            "obs": np.ascontiguousarray(obs),
            "obs_r": np.array([o.radius for o in self.obstacles], dtype=float),
        }

    def to_dict(self) -> dict:
        return {
            "agents": [
                {"id": a.id, "start": list(a.start), "goal": list(a.goal), "radius": a.radius}
                for a in self.agents
            ],
            "obstacles": [
                {"id": o.id, "center": list(o.center), "radius": o.radius} for o in self.obstacles
            ],
            "sensing_radius": self.sensing_radius,
            "dt": self.dt,
            "max_steps": self.max_steps,
            "u_max": self.u_max,
            "workspace": {"min": list(self.workspace.min), "max": list(self.workspace.max)},
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    def digest(self) -> str:
        return hashlib.sha256(self.to_json().encode()).hexdigest()[:16]


@dataclass(frozen=True)
class CbfParams:
    """The four class-K parameters: alpha(h) = zeta * h**eta, per neighbour kind."""

    zeta_a: float
    eta_a: float
    zeta_o: float
    eta_o: float

    def as_array(self) -> np.ndarray:
        return np.array([self.zeta_a, self.eta_a, self.zeta_o, self.eta_o], dtype=float)

    @classmethod
    def from_array(cls, a) -> "CbfParams":
        return cls(float(a[0]), float(a[1]), float(a[2]), float(a[3]))


@dataclass(frozen=True)
class ParamBounds:
    zeta: tuple[float, float] = DEFAULT_ZETA_BOUNDS
    eta: tuple[float, float] = DEFAULT_ETA_BOUNDS

    @property
    def lo(self) -> np.ndarray:
        return np.array([self.zeta[0], self.eta[0], self.zeta[0], self.eta[0]])

    @property
    def hi(self) -> np.ndarray:
        return np.array([self.zeta[1], self.eta[1], self.zeta[1], self.eta[1]])

    def contains(self, params: CbfParams) -> bool:
        a = params.as_array()
        return bool(np.all(a >= self.lo) and np.all(a <= self.hi))


@dataclass(frozen=True)
class ControllerConfig:
    # epsilon: CLF decay rate; xi: slack penalty weight
    epsilon: float = 4.0
    xi: float = 1000.0
    param_bounds: ParamBounds = field(default_factory=ParamBounds)

    def __post_init__(self):
        if self.epsilon < 0:
            raise ConfigError("epsilon must be nonnegative")
        if self.xi <= 0:
            raise ConfigError("xi must be positive")


def pairwise_clearance(p: Sequence[float], q: Sequence[float], r_p: float, r_q: float) -> float:
    """Surface-to-surface distance between two disks; negative means overlap."""
    dx = float(p[0]) - float(q[0])
    dy = float(p[1]) - float(q[1])
    return math.sqrt(dx * dx + dy * dy) - (r_p + r_q)


def validate_config(config: WorldConfig) -> list[str]:
    """Return every invariant violation of ``config``; empty iff valid."""
    problems = []
    if not config.sensing_radius > 0:
        problems.append("sensing_radius must be positive")
    if not config.dt > 0:
        problems.append("dt must be positive")
    if not config.max_steps >= 1:
        problems.append("max_steps must be at least 1")
    if not config.u_max > 0:
        problems.append("u_max must be positive")
    ws = config.workspace
    if not (ws.min[0] < ws.max[0] and ws.min[1] < ws.max[1]):
        problems.append("workspace min must be below max on both axes")
    ids = [a.id for a in config.agents]
    if len(set(ids)) != len(ids):
        problems.append("agent ids must be unique")
    oids = [o.id for o in config.obstacles]
    if len(set(oids)) != len(oids):
        problems.append("obstacle ids must be unique")
    for a in config.agents:
        if not a.radius > 0:
            problems.append(f"agent {a.id}: radius must be positive")
        if not ws.contains(a.start):
            problems.append(f"agent {a.id}: start outside workspace")
        if not ws.contains(a.goal):
            problems.append(f"agent {a.id}: goal outside workspace")
    for o in config.obstacles:
        if not o.radius > 0:
            problems.append(f"obstacle {o.id}: radius must be positive")
    for idx, a in enumerate(config.agents):
        for b in config.agents[idx + 1:]:
            if pairwise_clearance(a.start, b.start, a.radius, b.radius) <= 0:
                problems.append(f"agents {a.id} and {b.id}: start positions overlap")
        for o in config.obstacles:
            if pairwise_clearance(a.start, o.center, a.radius, o.radius) <= 0:
                problems.append(f"agent {a.id} and obstacle {o.id}: start overlaps obstacle")
            if pairwise_clearance(a.goal, o.center, a.radius, o.radius) <= 0:
                problems.append(f"agent {a.id} and obstacle {o.id}: goal overlaps obstacle")
    return problems


_TOP_KEYS = {"agents", "obstacles", "sensing_radius", "dt", "max_steps", "u_max", "workspace"}
_AGENT_KEYS = {"id", "start", "goal", "radius"}
_OBS_KEYS = {"id", "center", "radius"}
_WS_KEYS = {"min", "max"}


def _check_keys(obj, allowed: set, where: str, required: set | None = None):
    if not isinstance(obj, dict):
        raise ConfigError(f"{where}: expected an object")
    unknown = set(obj) - allowed
    if unknown:
        raise ConfigError(f"{where}: unknown keys {sorted(unknown)}")
    missing = (required if required is not None else allowed) - set(obj)
    if missing:
        raise ConfigError(f"{where}: missing keys {sorted(missing)}")


def config_from_dict(doc: dict) -> WorldConfig:
    """Parse a scenario document. Unknown keys are rejected."""
    _check_keys(doc, _TOP_KEYS, "scenario")
    try:
        agents = []
        for k, a in enumerate(doc["agents"]):
            _check_keys(a, _AGENT_KEYS, f"agents[{k}]")
            agents.append(AgentSpec(int(a["id"]), a["start"], a["goal"], a["radius"]))
        obstacles = []
        for k, o in enumerate(doc["obstacles"]):
            _check_keys(o, _OBS_KEYS, f"obstacles[{k}]")
            obstacles.append(ObstacleSpec(int(o["id"]), o["center"], o["radius"]))
        _check_keys(doc["workspace"], _WS_KEYS, "workspace")
        return WorldConfig(
            agents=tuple(agents),
            obstacles=tuple(obstacles),
            sensing_radius=float(doc["sensing_radius"]),
            dt=float(doc["dt"]),
            max_steps=int(doc["max_steps"]),
            u_max=float(doc["u_max"]),
            workspace=Workspace(doc["workspace"]["min"], doc["workspace"]["max"]),
        )
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"malformed scenario: {exc}") from exc


def load_config(path) -> WorldConfig:
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    return config_from_dict(doc)


def save_config(config: WorldConfig, path) -> None:
    with open(path, "w") as fh:
        json.dump(config.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
