"""Decentralized CLF-CBF-QP controller for single-integrator disk agents.

Decision vector is ``(u1, u2, delta)``; all rows use ``coeffs . x >= rhs``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .qp import ConstraintRow, QpProblem, solve_qp
from .types import AgentSpec, AgentState, CbfParams, ControllerConfig, ObstacleSpec


class SafetyViolation(RuntimeError):
    """A barrier value was negative on entry: the pair already overlaps."""

    def __init__(self, agent, kind: str, other, h: float, step: int | None = None):
        self.agent = agent
        self.kind = kind
        self.other = other
        self.h = float(h)
        self.step = step
        where = "" if step is None else f" at step {step}"
        super().__init__(f"agent {agent} overlaps {kind} {other}{where} (h={h:.3g})")


@dataclass(frozen=True)
class NeighborAgent:
    id: int
    state: AgentState
    radius: float


@dataclass(frozen=True)
class LocalView:
    """Everything one agent may use: its own state and what lies within sensing range."""

    self_state: AgentState
    self_spec: AgentSpec
    neighbor_agents: tuple[NeighborAgent, ...] = ()
    neighbor_obstacles: tuple[ObstacleSpec, ...] = ()

    def sorted(self) -> "LocalView":
        return LocalView(
            self.self_state,
            self.self_spec,
            tuple(sorted(self.neighbor_agents, key=lambda n: n.id)),
            tuple(sorted(self.neighbor_obstacles, key=lambda o: o.id)),
        )

    def translated(self, c) -> "LocalView":
        cx, cy = float(c[0]), float(c[1])

        def sh(p):
            return (p[0] + cx, p[1] + cy)

        spec = self.self_spec
        return LocalView(
            AgentState(sh(self.self_state.position), self.self_state.velocity),
            AgentSpec(spec.id, sh(spec.start), sh(spec.goal), spec.radius),
            tuple(NeighborAgent(n.id, AgentState(sh(n.state.position), n.state.velocity), n.radius)
                  for n in self.neighbor_agents),
            tuple(ObstacleSpec(o.id, sh(o.center), o.radius) for o in self.neighbor_obstacles),
        )


@dataclass(frozen=True)
class ControlDecision:
    u: np.ndarray
    delta: float
    feasible: bool
    constraint_count: int
    active_tags: tuple[str, ...] = ()


def class_k(h: float, zeta: float, eta: float) -> float:
    """alpha(h) = zeta * h**eta; raises for a breached barrier (h < 0)."""
    if h < 0:
        raise ValueError(f"class-K function undefined for negative barrier value {h}")
    return zeta * h ** eta


def clf_row(p, d, epsilon: float) -> ConstraintRow:
    """``2(p-d)^T u + eps*V + delta <= 0`` with ``V = |p-d|^2``."""
    ex = float(p[0]) - float(d[0])
    ey = float(p[1]) - float(d[1])
    V = ex * ex + ey * ey
    return ConstraintRow(np.array([-2.0 * ex, -2.0 * ey, -1.0]), epsilon * V, "CLF")


def _barrier(p, q, r_p, r_q) -> tuple[float, float, float]:
    dx = float(p[0]) - float(q[0])
    dy = float(p[1]) - float(q[1])
    s = r_p + r_q
    return dx, dy, dx * dx + dy * dy - s * s


def cbf_agent_row(self_state: AgentState, self_radius: float, other: AgentState,
                  other_radius: float, zeta_a: float, eta_a: float, other_id=None) -> ConstraintRow:
    """Inter-agent row; the neighbour's last applied control stands in for its velocity."""
    dx, dy, h = _barrier(self_state.position, other.position, self_radius, other_radius)
    vx, vy = other.velocity
    rhs = 2.0 * (dx * vx + dy * vy) - class_k(h, zeta_a, eta_a)
    return ConstraintRow(np.array([2.0 * dx, 2.0 * dy, 0.0]), rhs, f"CBF-agent({other_id})")


def cbf_obstacle_row(self_state: AgentState, self_radius: float, obstacle: ObstacleSpec,
                     zeta_o: float, eta_o: float) -> ConstraintRow:
    dx, dy, h = _barrier(self_state.position, obstacle.center, self_radius, obstacle.radius)
    rhs = -class_k(h, zeta_o, eta_o)
    return ConstraintRow(np.array([2.0 * dx, 2.0 * dy, 0.0]), rhs, f"CBF-obstacle({obstacle.id})")


def build_rows(view: LocalView, params: CbfParams, cfg: ControllerConfig) -> list[ConstraintRow]:
    """CLF row, then one CBF row per neighbour agent and per neighbour obstacle (ascending id).

    Raises :class:`SafetyViolation` if any barrier is already negative.
    """
    view = view.sorted()
    me = view.self_state
    spec = view.self_spec
    rows = [clf_row(me.position, spec.goal, cfg.epsilon)]
    for nb in view.neighbor_agents:
        h = _barrier(me.position, nb.state.position, spec.radius, nb.radius)[2]
        if h < 0:
            raise SafetyViolation(spec.id, "agent", nb.id, h)
        rows.append(cbf_agent_row(me, spec.radius, nb.state, nb.radius,
                                  params.zeta_a, params.eta_a, nb.id))
    for ob in view.neighbor_obstacles:
        h = _barrier(me.position, ob.center, spec.radius, ob.radius)[2]
        if h < 0:
            raise SafetyViolation(spec.id, "obstacle", ob.id, h)
        rows.append(cbf_obstacle_row(me, spec.radius, ob, params.zeta_o, params.eta_o))
    return rows


def compute_control(view: LocalView, params: CbfParams, cfg: ControllerConfig,
                    u_max: float) -> ControlDecision:
    """Solve this agent's QP; an infeasible QP yields ``u = 0`` and ``feasible=False``."""
    rows = build_rows(view, params, cfg)
    problem = QpProblem(
        quad_diag=np.array([1.0, 1.0, cfg.xi]),
        rows=tuple(rows),
        box_lo=np.array([-u_max, -u_max, -np.inf]),
        box_hi=np.array([u_max, u_max, np.inf]),
    )
    sol = solve_qp(problem)
    count = len(rows) - 1
    if not sol.feasible:
        return ControlDecision(np.zeros(2), 0.0, False, count)
    tags = tuple(rows[i].tag if i < len(rows) else "box" for i in sol.active_set)
    return ControlDecision(sol.x[:2].copy(), float(sol.x[2]), True, count, tags)
