"""Synchronous world stepping, episodes, safety audits and trajectory logs.

All agents' controls are computed from the same step-t snapshot and applied
together (single-integrator Euler update). Agents within ``ARRIVAL_RADIUS`` of
their goal are frozen for the rest of the episode.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np

from ._backend import kernels
from .controller import LocalView, NeighborAgent, SafetyViolation
from .rewards import RewardConfig, step_rewards
from .types import AgentState, ControllerConfig, WorldConfig

log = logging.getLogger(__name__)

ARRIVAL_RADIUS = 0.05


class ContractViolation(ValueError):
    """A caller broke an operation's precondition."""


@dataclass(frozen=True)
class WorldState:
    t: int
    positions: np.ndarray
    velocities: np.ndarray
    done: np.ndarray

    @classmethod
    def initial(cls, config: WorldConfig, arrival_radius: float = ARRIVAL_RADIUS) -> "WorldState":
        arr = config.arrays()
        pos = arr["start"].copy()
        done = _arrived(pos, arr["goal"], arrival_radius)
        return cls(0, pos, np.zeros_like(pos), done)

    @property
    def agents(self) -> list[AgentState]:
        return [AgentState(tuple(p), tuple(v)) for p, v in zip(self.positions, self.velocities)]


def _arrived(pos, goal, arrival_radius):
    g = pos - goal
    return g[:, 0] * g[:, 0] + g[:, 1] * g[:, 1] <= arrival_radius * arrival_radius


@dataclass(frozen=True)
class Observation:
    """One step's world snapshot in the padded layout the policies consume.

    ``agent_mask[i, j]`` is true iff agent j is in agent i's closed sensing
    ball (never on the diagonal); ``obstacle_mask[i, l]`` likewise.
    """

    positions: np.ndarray
    velocities: np.ndarray
    goals: np.ndarray
    active: np.ndarray
    agent_mask: np.ndarray
    obstacles: np.ndarray
    obstacle_mask: np.ndarray
    t: int = 0
    max_steps: int = 1


def observe(positions, velocities, goals, active, obstacles, sensing_radius, t=0, max_steps=1) -> Observation:
    sig2 = sensing_radius * sensing_radius
    dx = positions[:, None, 0] - positions[None, :, 0]
    dy = positions[:, None, 1] - positions[None, :, 1]
    amask = dx * dx + dy * dy <= sig2
    np.fill_diagonal(amask, False)
    ox = positions[:, None, 0] - obstacles[None, :, 0]
    oy = positions[:, None, 1] - obstacles[None, :, 1]
    omask = ox * ox + oy * oy <= sig2
    return Observation(positions, velocities, goals, active, amask, obstacles, omask, t, max_steps)


def neighbors(world: WorldState, config: WorldConfig, i: int) -> LocalView:
    """Agent ``i``'s local view: agents and obstacles whose centres lie within the closed sensing ball."""
    sig2 = config.sensing_radius * config.sensing_radius
    px, py = world.positions[i]
    nbrs = []
    for j, spec in enumerate(config.agents):
        if j == i:
            continue
        dx = px - world.positions[j, 0]
        dy = py - world.positions[j, 1]
        if dx * dx + dy * dy <= sig2:
            nbrs.append(NeighborAgent(spec.id, AgentState(tuple(world.positions[j]),
                                                          tuple(world.velocities[j])), spec.radius))
    obs = []
    for o in config.obstacles:
        dx = px - o.center[0]
        dy = py - o.center[1]
        if dx * dx + dy * dy <= sig2:
            obs.append(o)
    me = AgentState(tuple(world.positions[i]), tuple(world.velocities[i]))
    return LocalView(me, config.agents[i], tuple(nbrs), tuple(obs))


def step(world: WorldState, controls, config: WorldConfig,
         arrival_radius: float = ARRIVAL_RADIUS) -> WorldState:
    """Apply one Euler step to every non-done agent."""
    u = np.asarray(controls, dtype=float).reshape(-1, 2)
    if np.any(np.abs(u) > config.u_max):
        raise ContractViolation("control outside the box [-u_max, u_max]")
    active = ~world.done
    pos = world.positions.copy()
    pos[active] += u[active] * config.dt
    vel = np.where(active[:, None], u, 0.0)
    done = world.done | _arrived(pos, config.arrays()["goal"], arrival_radius)
    vel[done] = 0.0
    return WorldState(world.t + 1, pos, vel, done)


@dataclass
class Trajectory:
    config: WorldConfig
    seed: int | None
    positions: np.ndarray          # (L, N, 2), row 0 is the start state
    controls: np.ndarray           # (L-1, N, 2)
    params: np.ndarray             # (L-1, N, 4), zero once an agent is done
    feasible: np.ndarray           # (L-1, N) bool
    active: np.ndarray             # (L-1, N) bool, agent was still driving at step t
    rewards: np.ndarray            # (L-1, N)
    done_step: np.ndarray          # (N,) first index t with positions[t] inside the arrival radius, -1 if never
    status: str = "timeout"        # "arrived" | "timeout" | "violation"
    violation: dict | None = None
    actions: np.ndarray | None = field(default=None, repr=False)   # pre-squash samples
    log_probs: np.ndarray | None = field(default=None, repr=False)

    @property
    def steps(self) -> int:
        return self.controls.shape[0]

    @property
    def success(self) -> np.ndarray:
        ok = self.done_step >= 0
        if self.violation is not None:
            ok = np.zeros_like(ok)
        return ok

    @property
    def infeasible_steps(self) -> int:
        return int(np.sum(self.active & ~self.feasible))

    def velocities_at(self, t: int) -> np.ndarray:
        """Velocity cache seen at step ``t`` (previous control, zero when frozen or at t=0)."""
        if t == 0:
            return np.zeros_like(self.positions[0])
        v = self.controls[t - 1].copy()
        done = (self.done_step >= 0) & (self.done_step <= t)
        v[done] = 0.0
        return v


def run_episode(config: WorldConfig, policy, seed: int | None = 0,
                controller: ControllerConfig | None = None,
                reward_cfg: RewardConfig | None = None,
                arrival_radius: float = ARRIVAL_RADIUS) -> Trajectory:
    """Roll out one episode; deterministic given (config, policy parameters, seed).

    A negative barrier value aborts the episode with ``status == "violation"``
    and the offending pair recorded in ``Trajectory.violation``.
    """
    ctrl = controller or ControllerConfig()
    rcfg = reward_cfg or RewardConfig()
    arr = config.arrays()
    goal, radius, obs, obs_r = arr["goal"], arr["radius"], arr["obs"], arr["obs_r"]
    n = config.n_agents
    rng = np.random.default_rng(seed)
    policy.reset(config, rng)
    pos = arr["start"].copy()
    vel = np.zeros_like(pos)
    done = _arrived(pos, goal, arrival_radius)
    done_step = np.where(done, 0, -1)
    T = config.max_steps
    P = [pos.copy()]
    U, PAR, FEAS, ACT, REW, Z, LP = [], [], [], [], [], [], []
    violation = None
    status = "timeout"
    stochastic = getattr(policy, "stochastic", False)
    for t in range(T):
        if done.all():
            break
        active = ~done
        ob = observe(pos, vel, goal, active, obs, config.sensing_radius, t, T)
        out = policy.act(ob, rng)
        params = np.ascontiguousarray(out.params, dtype=float)
        u, _, feas, _, viol = kernels.control_step(
            pos, vel, goal, radius, active.astype(np.int8), obs, obs_r, params,
            config.sensing_radius, ctrl.epsilon, ctrl.xi, config.u_max,
            2.0 * config.u_max * config.dt)
        if viol is not None:
            i, kind, other, h = viol
            kind_s = "agent" if kind == 1 else "obstacle"
            other_id = config.agents[other].id if kind == 1 else config.obstacles[other].id
            violation = {"step": t, "agent": config.agents[i].id, "kind": kind_s,
                         "other": other_id, "h": float(h)}
            status = "violation"
            log.info("episode aborted: %s", SafetyViolation(violation["agent"], kind_s, other_id, h, t))
            break
        feas = feas.astype(bool) | ~active
        u = np.where(active[:, None], u, 0.0)
        REW.append(np.where(active, step_rewards(pos, goal, u, feas, rcfg), 0.0))
        U.append(u)
        PAR.append(np.where(active[:, None], params, 0.0))
        FEAS.append(feas)
        ACT.append(active)
        if stochastic:
            Z.append(out.actions)
            LP.append(out.log_probs)
        pos = pos + np.where(active[:, None], u, 0.0) * config.dt
        vel = u.copy()
        arrived = _arrived(pos, goal, arrival_radius) & ~done
        done = done | arrived
        done_step[arrived] = t + 1
        vel[done] = 0.0
        P.append(pos.copy())
    if violation is None and done.all():
        status = "arrived"
    L = len(P)
    traj = Trajectory(
        config=config,
        seed=seed,
        positions=np.array(P),
        controls=np.array(U).reshape(L - 1, n, 2),
        params=np.array(PAR).reshape(L - 1, n, 4),
        feasible=np.array(FEAS, dtype=bool).reshape(L - 1, n),
        active=np.array(ACT, dtype=bool).reshape(L - 1, n),
        rewards=np.array(REW).reshape(L - 1, n),
        done_step=done_step,
        status=status,
        violation=violation,
    )
    if stochastic:
        traj.actions = np.array(Z).reshape(L - 1, n, 4)
        traj.log_probs = np.array(LP).reshape(L - 1, n)
    return traj


@dataclass(frozen=True)
class SafetyRecord:
    step: int
    agent: int
    kind: str
    other: int
    separation: float
    required: float


def check_safety(traj: Trajectory, config: WorldConfig | None = None,
                 tol: float | None = None) -> list[SafetyRecord]:
    """Flag every recorded step where a pair is closer than the sum of radii minus ``tol``.

    ``tol`` defaults to ``2 * u_max * dt``: continuous-time forward invariance
    does not bind between Euler samples.
    """
    config = config or traj.config
    if tol is None:
        tol = 2.0 * config.u_max * config.dt
    arr = config.arrays()
    rad = arr["radius"]
    out = []
    P = traj.positions
    n = P.shape[1]
    for t in range(P.shape[0]):
        p = P[t]
        for i in range(n):
            for j in range(i + 1, n):
                sep = float(np.sqrt(np.sum((p[i] - p[j]) ** 2)))
                req = rad[i] + rad[j]
                if sep < req - tol:
                    out.append(SafetyRecord(t, config.agents[i].id, "agent", config.agents[j].id, sep, req))
            for l in range(arr["obs"].shape[0]):
                sep = float(np.sqrt(np.sum((p[i] - arr["obs"][l]) ** 2)))
                req = rad[i] + arr["obs_r"][l]
                if sep < req - tol:
                    out.append(SafetyRecord(t, config.agents[i].id, "obstacle",
                                            config.obstacles[l].id, sep, req))
    return out


def _fmt(v):
    return [float(v[0]), float(v[1])]


def write_trajectory(traj: Trajectory, path) -> None:
    """JSON-lines log: a header object, then one object per (step, agent)."""
    header = {
        "type": "header",
        "scenario_hash": traj.config.digest(),
        "seed": traj.seed,
        "status": traj.status,
        "steps": traj.steps,
        "violation": traj.violation,
        "scenario": traj.config.to_dict(),
    }
    with open(path, "w") as fh:
        fh.write(json.dumps(header, sort_keys=True) + "\n")
        L = traj.positions.shape[0]
        for t in range(L):
            for i, spec in enumerate(traj.config.agents):
                rec = {"t": t, "agent": spec.id, "p": _fmt(traj.positions[t, i])}
                if t < L - 1 and traj.active[t, i]:
                    za, ea, zo, eo = (float(v) for v in traj.params[t, i])
                    rec.update(u=_fmt(traj.controls[t, i]),
                               params={"za": za, "ea": ea, "zo": zo, "eo": eo},
                               feasible=bool(traj.feasible[t, i]),
                               reward=float(traj.rewards[t, i]))
                else:
                    rec.update(u=[0.0, 0.0] if t < L - 1 else None, params=None,
                               feasible=None, reward=0.0 if t < L - 1 else None)
                fh.write(json.dumps(rec, sort_keys=True) + "\n")


def read_trajectory(path) -> Trajectory:
    from .types import config_from_dict

    with open(path) as fh:
        header = json.loads(fh.readline())
        if header.get("type") != "header":
            raise ValueError(f"{path}: missing trajectory header")
        config = config_from_dict(header["scenario"])
        recs = [json.loads(line) for line in fh if line.strip()]
    n = config.n_agents
    index = {a.id: k for k, a in enumerate(config.agents)}
    L = max(r["t"] for r in recs) + 1
    P = np.zeros((L, n, 2))
    U = np.zeros((L - 1, n, 2))
    PAR = np.zeros((L - 1, n, 4))
    FEAS = np.ones((L - 1, n), bool)
    ACT = np.zeros((L - 1, n), bool)
    REW = np.zeros((L - 1, n))
    for r in recs:
        t, i = r["t"], index[r["agent"]]
        P[t, i] = r["p"]
        if t < L - 1:
            U[t, i] = r["u"]
            REW[t, i] = r["reward"]
            if r["params"] is not None:
                ACT[t, i] = True
                p = r["params"]
                PAR[t, i] = [p["za"], p["ea"], p["zo"], p["eo"]]
                FEAS[t, i] = r["feasible"]
    goal = config.arrays()["goal"]
    done_step = np.full(n, -1)
    for i in range(n):
        for t in range(L):
            g = P[t, i] - goal[i]
            if g[0] * g[0] + g[1] * g[1] <= ARRIVAL_RADIUS * ARRIVAL_RADIUS:
                done_step[i] = t
                break
    return Trajectory(config, header.get("seed"), P, U, PAR, FEAS, ACT, REW, done_step,
                      status=header.get("status", "timeout"), violation=header.get("violation"))
