"""Navigation metrics, the fixed-parameter grid search and the randomised evaluation harness."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .policy import FixedPolicy
from .scenarios import make_scenario
from .sim import Trajectory, run_episode
from .types import CbfParams, ControllerConfig, WorldConfig


def spl(records) -> float:
    """Mean of ``S * shortest / max(actual, shortest)`` over ``(success, shortest, actual)`` records."""
    records = list(records)
    if not records:
        raise ValueError("spl needs at least one record")
    acc = 0.0
    for success, shortest, actual in records:
        if not shortest > 0:
            raise ValueError("shortest path length must be positive")
        if success:
            acc += shortest / max(actual, shortest)
    return acc / len(records)


def reference_speed(config: WorldConfig) -> float:
    """Fastest speed the per-axis box allows: ``u_max * sqrt(2)``."""
    return config.u_max * math.sqrt(2.0)


def pct_speed(traj: Trajectory, agent: int, v_ref: float) -> float:
    """Mean ``|u_t|`` over the agent's pre-arrival steps divided by ``v_ref``.

    ``agent`` is the row index in the scenario. An agent that never acted
    (started on its goal) scores 0.
    """
    if not v_ref > 0:
        raise ValueError("v_ref must be positive")
    act = traj.active[:, agent]
    if not act.any():
        return 0.0
    u = traj.controls[act, agent]
    speeds = np.sqrt(u[:, 0] * u[:, 0] + u[:, 1] * u[:, 1])
    return float(np.mean(speeds)) / v_ref


def path_length(traj: Trajectory, agent: int) -> float:
    d = np.diff(traj.positions[:, agent], axis=0)
    return float(np.sum(np.sqrt(d[:, 0] * d[:, 0] + d[:, 1] * d[:, 1])))


@dataclass
class EpisodeMetrics:
    success: list[bool]
    path_length: list[float]
    straight_line_length: list[float]
    mean_speed: list[float]
    spl: float
    pct_speed: float
    success_rate: float
    episode_steps: int
    infeasible_steps: int
    status: str = ""

    def to_dict(self) -> dict:
        return asdict(self)


def episode_metrics(traj: Trajectory, v_ref: float | None = None) -> EpisodeMetrics:
    cfg = traj.config
    v_ref = reference_speed(cfg) if v_ref is None else v_ref
    arr = cfg.arrays()
    succ = [bool(s) for s in traj.success]
    n = cfg.n_agents
    straight = []
    for i in range(n):
        g = arr["goal"][i] - arr["start"][i]
        straight.append(float(math.sqrt(g[0] * g[0] + g[1] * g[1])))
    paths = [path_length(traj, i) for i in range(n)]
    pct = [pct_speed(traj, i, v_ref) for i in range(n)]
    recs = [(s, sl, p) for s, sl, p in zip(succ, straight, paths) if sl > 0]
    return EpisodeMetrics(
        success=succ,
        path_length=paths,
        straight_line_length=straight,
        mean_speed=[p * v_ref for p in pct],
        spl=spl(recs) if recs else float(all(succ)),
        pct_speed=float(np.mean(pct)),
        success_rate=float(np.mean(succ)),
        episode_steps=traj.steps,
        infeasible_steps=traj.infeasible_steps,
        status=traj.status,
    )


# grid search ------------------------------------------------------------------

@dataclass(frozen=True)
class GridSpec:
    zetas: tuple[float, ...] = tuple(np.linspace(0.1, 10.0, 10).tolist())
    etas: tuple[float, ...] = tuple(np.linspace(1.0, 2.0, 10).tolist())

    def points(self):
        return [(z, e) for z in self.zetas for e in self.etas]


@dataclass(frozen=True)
class GridRow:
    zeta: float
    eta: float
    spl: float
    pct_speed: float
    success: bool
    infeasible_steps: int
    success_rate: float = 0.0

    @property
    def params(self) -> CbfParams:
        return CbfParams(self.zeta, self.eta, self.zeta, self.eta)


GRID_COLUMNS = ("zeta", "eta", "spl", "pct_speed", "success", "infeasible_steps", "success_rate")


def sort_grid(rows):
    return sorted(rows, key=lambda r: (-r.spl, -r.pct_speed, r.zeta, r.eta))


def _grid_point(args):
    config, z, e, controller, seed = args
    traj = run_episode(config, FixedPolicy(CbfParams(z, e, z, e)), seed, controller)
    m = episode_metrics(traj)
    return GridRow(z, e, m.spl, m.pct_speed, all(m.success), m.infeasible_steps, m.success_rate)


def grid_search(config: WorldConfig, grid: GridSpec = GridSpec(),
                controller: ControllerConfig | None = None, seed: int = 0,
                jobs: int = 1) -> list[GridRow]:
    """One deterministic episode per ``(zeta, eta)``, applied to agent and obstacle rows alike.

    Rows come back sorted by SPL desc, PCTSpeed desc, zeta asc, eta asc;
    the first row is the best fixed-parameter baseline.
    """
    tasks = [(config, z, e, controller, seed) for z, e in grid.points()]
    if jobs > 1:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(jobs) as pool:
            rows = list(pool.map(_grid_point, tasks, chunksize=4))
    else:
        rows = [_grid_point(t) for t in tasks]
    return sort_grid(rows)


def write_grid_csv(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(GRID_COLUMNS)
        for r in rows:
            w.writerow([repr(r.zeta), repr(r.eta), repr(r.spl), repr(r.pct_speed),
                        int(r.success), r.infeasible_steps, repr(r.success_rate)])


def read_grid_csv(path) -> list[GridRow]:
    with open(path) as fh:
        return [GridRow(float(r["zeta"]), float(r["eta"]), float(r["spl"]), float(r["pct_speed"]),
                        bool(int(r["success"])), int(r["infeasible_steps"]), float(r["success_rate"]))
                for r in csv.DictReader(fh)]


# evaluation ---------------------------------------------------------------------

def evaluation_seeds(seed: int, k: int) -> tuple[int, int]:
    s = np.random.SeedSequence([seed, k, 101]).generate_state(2)
    return int(s[0]), int(s[1])


@dataclass
class EvalSummary:
    n_episodes: int
    spl_mean: float
    spl_std: float
    pct_speed_mean: float
    pct_speed_std: float
    success_rate_mean: float
    success_rate_std: float
    episodes: list[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)


def summarize(records) -> EvalSummary:
    records = list(records)
    spls = np.array([r["spl"] for r in records])
    pcts = np.array([r["pct_speed"] for r in records])
    succ = np.array([r["success_rate"] for r in records])
    return EvalSummary(len(records), float(spls.mean()), float(spls.std()), float(pcts.mean()),
                       float(pcts.std()), float(succ.mean()), float(succ.std()), records)


def _eval_one(args):
    make_policy, kind, fixed_config, scen_seed, ep_seed, controller = args
    config = fixed_config if fixed_config is not None else make_scenario(kind, scen_seed)
    traj = run_episode(config, make_policy(), ep_seed, controller)
    m = episode_metrics(traj)
    rec = m.to_dict()
    rec.update(scenario_seed=None if fixed_config is not None else scen_seed, episode_seed=ep_seed,
               scenario_hash=config.digest())
    return rec


def evaluate(make_policy, family, n_episodes: int, seed: int = 0,
             controller: ControllerConfig | None = None, jobs: int = 1) -> EvalSummary:
    """Run ``n_episodes`` seed-shifted scenarios of ``family`` and aggregate.

    ``family`` is a scenario kind name (each episode draws a shifted layout)
    or a fixed :class:`WorldConfig`. ``make_policy`` is a zero-argument
    factory so each episode starts from a fresh policy object.
    """
    if n_episodes < 1:
        raise ValueError("n_episodes must be at least 1")
    fixed = family if isinstance(family, WorldConfig) else None
    kind = None if fixed is not None else family
    tasks = [(make_policy, kind, fixed, *evaluation_seeds(seed, k), controller)
             for k in range(n_episodes)]
    if jobs > 1:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(jobs) as pool:
            records = list(pool.map(_eval_one, tasks))
    else:
        records = [_eval_one(t) for t in tasks]
    return summarize(records)


def write_summary_json(summary: EvalSummary, path) -> None:
    with open(path, "w") as fh:
        json.dump(summary.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
