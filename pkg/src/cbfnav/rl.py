"""Clipped policy-gradient (PPO) training of the shared CBF-tuning network.

Every agent's transitions carry its own reward. The critic is a separate
message-passing value network that additionally sees the agent's goal offset
and the normalised time; it is used only during training.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .nn import Adam, MlpSpec, mlp_backward, mlp_forward_cache
from .policy import (GnnPolicy, GraphBatch, MessageAggregator, PolicyParams, concat_graphs,
                     gaussian_log_prob, graph_from_observation, init_policy, policy_mean,
                     policy_mean_backward, subset_graph)
from .rewards import RewardConfig, reward, step_rewards  # noqa: F401  (re-exported)
from .scenarios import make_scenario
from .sim import Trajectory, observe, run_episode
from .types import ControllerConfig

log = logging.getLogger(__name__)

CURVE_COLUMNS = ("iteration", "mean_reward", "success_rate", "infeasible_steps",
                 "clip_fraction", "approx_kl")


class NonFiniteError(FloatingPointError):
    """A loss or gradient became NaN/inf; the update was not applied."""


def discounted_return(rewards, gamma: float) -> float:
    """``sum_t gamma**t * r_t``, accumulated back to front."""
    g = 0.0
    for r in reversed(list(rewards)):
        g = float(r) + gamma * g
    return g


def gae(rewards, values, gamma: float, lam: float) -> np.ndarray:
    """Generalised advantage estimates; ``values`` carries one bootstrap entry."""
    r = np.asarray(rewards, dtype=float)
    v = np.asarray(values, dtype=float)
    if v.shape[0] != r.shape[0] + 1:
        raise ValueError("values must have exactly one more entry than rewards")
    adv = np.zeros_like(r)
    acc = 0.0
    for t in range(r.shape[0] - 1, -1, -1):
        delta = r[t] + gamma * v[t + 1] - v[t]
        acc = delta + gamma * lam * acc
        adv[t] = acc
    return adv


@dataclass(frozen=True)
class TrainConfig:
    iterations: int = 150
    episodes_per_iteration: int = 8
    epochs: int = 4
    minibatch_size: int = 1024
    clip_ratio: float = 0.2
    gae_lambda: float = 0.95
    learning_rate: float = 3e-4
    critic_learning_rate: float = 1e-3
    entropy_coeff: float = 0.0
    value_coeff: float = 0.5
    max_grad_norm: float = 0.5
    init_log_std: float = 0.0
    hidden: int = 64
    seed: int = 0
    scenario: str = "proof_of_concept"
    jobs: int = 1

    def __post_init__(self):
        if not self.clip_ratio > 0:
            raise ValueError("clip_ratio must be positive")
        if not 0.0 <= self.gae_lambda <= 1.0:
            raise ValueError("gae_lambda must lie in [0, 1]")
        if self.iterations < 0 or self.episodes_per_iteration < 1 or self.epochs < 1:
            raise ValueError("iterations >= 0, episodes_per_iteration >= 1, epochs >= 1 required")
        if self.minibatch_size < 1:
            raise ValueError("minibatch_size must be positive")
        if self.learning_rate < 0 or self.critic_learning_rate < 0:
            raise ValueError("learning rates must be nonnegative")


# critic ------------------------------------------------------------------------

N_EXTRA = 4  # goal offset (2), goal distance, t / T


@dataclass
class CriticParams:
    hidden: int
    theta: np.ndarray

    @property
    def specs(self):
        h = self.hidden
        return MlpSpec((4, h, h)), MlpSpec((2, h, h)), MlpSpec((h + N_EXTRA, h, 1))

    def split(self, theta=None):
        t = self.theta if theta is None else theta
        ma, mo, hd = self.specs
        a = ma.n_params
        b = a + mo.n_params
        return t[:a], t[a:b], t[b:b + hd.n_params]


def init_critic(hidden: int = 64, seed: int = 0) -> CriticParams:
    rng = np.random.default_rng(seed)
    c = CriticParams(hidden, np.zeros(0))
    ma, mo, hd = c.specs
    c.theta = np.concatenate([ma.init(rng), mo.init(rng), hd.init(rng)])
    return c


def critic_forward(critic: CriticParams, g: GraphBatch, extra: np.ndarray, theta=None):
    ma, mo, hd = critic.specs
    th_ma, th_mo, th_h = critic.split(theta)
    agg, cache = MessageAggregator(ma, mo).forward(th_ma, th_mo, g)
    x = np.concatenate([agg, extra], axis=1)
    v, h_cache = mlp_forward_cache(hd, th_h, x)
    return v[:, 0], (x, cache, h_cache)


def critic_backward(critic: CriticParams, g: GraphBatch, dv, cache, theta=None):
    ma, mo, hd = critic.specs
    th_ma, th_mo, th_h = critic.split(theta)
    x, agg_cache, h_cache = cache
    g_h, dx = mlp_backward(hd, th_h, x, dv[:, None], h_cache)
    H = ma.n_out
    g_ma, g_mo = MessageAggregator(ma, mo).backward(th_ma, th_mo, g, dx[:, :H], agg_cache)
    return np.concatenate([g_ma, g_mo, g_h])


def critic_extra(positions, goals, t, max_steps) -> np.ndarray:
    off = goals - positions
    dist = np.sqrt(off[:, 0] * off[:, 0] + off[:, 1] * off[:, 1])
    tt = np.full(positions.shape[0], t / max_steps)
    return np.column_stack([off, dist, tt])


# rollouts ----------------------------------------------------------------------

@dataclass
class RolloutBatch:
    graph: GraphBatch
    extra: np.ndarray        # critic-only features
    actions: np.ndarray      # pre-squash samples (B, 4)
    log_probs: np.ndarray    # behaviour log-density of the pre-squash sample
    rewards: np.ndarray
    values: np.ndarray
    advantages: np.ndarray
    returns: np.ndarray

    @property
    def size(self) -> int:
        return self.actions.shape[0]


def _step_graph(traj: Trajectory, t: int, rows, aord, oord):
    cfg = traj.config
    arr = cfg.arrays()
    ob = observe(traj.positions[t], traj.velocities_at(t), arr["goal"], None, arr["obs"],
                 cfg.sensing_radius, t, cfg.max_steps)
    return graph_from_observation(ob, rows, aord, oord)


def trajectory_samples(traj: Trajectory):
    """Per-(step, agent) graphs and critic features for every acting sample.

    Returns ``(graph, extra, index)`` where ``index[k] = (t, i)``, plus the
    bootstrap graph/features for agents still active when the episode timed out.
    """
    cfg = traj.config
    arr = cfg.arrays()
    aord = np.argsort([a.id for a in cfg.agents], kind="stable")
    oord = np.argsort([o.id for o in cfg.obstacles], kind="stable")
    graphs, extras, index = [], [], []
    for t in range(traj.steps):
        rows = np.flatnonzero(traj.active[t])
        if rows.size == 0:
            continue
        graphs.append(_step_graph(traj, t, rows, aord, oord))
        extras.append(critic_extra(traj.positions[t][rows], arr["goal"][rows], t, cfg.max_steps))
        index.extend((t, int(i)) for i in rows)
    L = traj.steps
    tail_rows = np.array([], dtype=int)
    if traj.status == "timeout" and L > 0:
        tail_rows = np.flatnonzero(traj.done_step < 0)
    tail = None
    if tail_rows.size:
        tail = (_step_graph(traj, L, tail_rows, aord, oord),
                critic_extra(traj.positions[L][tail_rows], arr["goal"][tail_rows], L, cfg.max_steps),
                tail_rows)
    g = concat_graphs(graphs) if graphs else GraphBatch(0, np.zeros((0, 4)), np.zeros(0, np.intp),
                                                        np.zeros((0, 2)), np.zeros(0, np.intp))
    ex = np.concatenate(extras) if extras else np.zeros((0, N_EXTRA))
    return g, ex, index, tail


def build_batch(trajs, policy: PolicyParams, critic: CriticParams, gamma: float,
                lam: float) -> RolloutBatch:
    graphs, extras, acts, rews, vals, advs, rets = [], [], [], [], [], [], []
    for traj in trajs:
        g, ex, index, tail = trajectory_samples(traj)
        if g.n == 0:
            continue
        v, _ = critic_forward(critic, g, ex)
        boot = {}
        if tail is not None:
            tg, tex, trows = tail
            tv, _ = critic_forward(critic, tg, tex)
            boot = {int(i): float(x) for i, x in zip(trows, tv)}
        ts = np.array([k[0] for k in index])
        ag = np.array([k[1] for k in index])
        adv = np.zeros(g.n)
        ret = np.zeros(g.n)
        for i in np.unique(ag):
            sel = np.flatnonzero(ag == i)          # ascending in t
            r = traj.rewards[ts[sel], i]
            vv = np.append(v[sel], boot.get(int(i), 0.0))
            a = gae(r, vv, gamma, lam)
            adv[sel] = a
            ret[sel] = a + v[sel]
        graphs.append(g)
        extras.append(ex)
        acts.append(traj.actions[ts, ag])
        rews.append(traj.rewards[ts, ag])
        vals.append(v)
        advs.append(adv)
        rets.append(ret)
    g = concat_graphs(graphs)
    actions = np.concatenate(acts)
    mean, _ = policy_mean(policy, g)
    logp = np.sum(gaussian_log_prob(actions, mean, policy.log_std), axis=1)
    return RolloutBatch(g, np.concatenate(extras), actions, logp, np.concatenate(rews),
                        np.concatenate(vals), np.concatenate(advs), np.concatenate(rets))


def select(batch: RolloutBatch, idx) -> RolloutBatch:
    return RolloutBatch(subset_graph(batch.graph, idx), batch.extra[idx], batch.actions[idx],
                        batch.log_probs[idx], batch.rewards[idx], batch.values[idx],
                        batch.advantages[idx], batch.returns[idx])


# losses and the update -----------------------------------------------------------

def surrogate_terms(logp_new, logp_old, adv, clip_ratio):
    """Per-sample clipped surrogate (to maximise) and its derivative w.r.t. ``logp_new``."""
    ratio = np.exp(logp_new - logp_old)
    clipped = np.clip(ratio, 1.0 - clip_ratio, 1.0 + clip_ratio)
    unclipped_obj = ratio * adv
    clipped_obj = clipped * adv
    obj = np.minimum(unclipped_obj, clipped_obj)
    # the gradient flows only through the unclipped branch when it is the minimum
    live = unclipped_obj <= clipped_obj
    dobj_dlogp = np.where(live, adv * ratio, 0.0)
    return obj, dobj_dlogp, ratio


def policy_loss_and_grad(policy: PolicyParams, batch: RolloutBatch, adv, clip_ratio: float,
                         entropy_coeff: float, theta=None):
    """Loss ``-mean(surrogate) - c_e * entropy`` and its gradient w.r.t. the flat parameters."""
    theta = policy.theta if theta is None else theta
    log_std = policy._split(theta)[3]
    mean, cache = policy_mean(policy, batch.graph, theta)
    logp = np.sum(gaussian_log_prob(batch.actions, mean, log_std), axis=1)
    obj, dobj, ratio = surrogate_terms(logp, batch.log_probs, adv, clip_ratio)
    B = batch.size
    entropy = float(np.sum(log_std) + 2.0 * (1.0 + math.log(2.0 * math.pi)))
    loss = -float(np.mean(obj)) - entropy_coeff * entropy
    dlogp = -dobj / B
    std2 = np.exp(2.0 * log_std)
    diff = batch.actions - mean
    dmean = dlogp[:, None] * diff / std2
    dlog_std = np.sum(dlogp[:, None] * (diff * diff / std2 - 1.0), axis=0) - entropy_coeff
    grad = policy_mean_backward(policy, batch.graph, dmean, cache, theta)
    grad[-4:] = dlog_std
    info = {
        "ratio": ratio,
        "clip_fraction": float(np.mean(np.abs(ratio - 1.0) > clip_ratio)),
        "approx_kl": float(np.mean(batch.log_probs - logp)),
        "entropy": entropy,
    }
    return loss, grad, info


def value_loss_and_grad(critic: CriticParams, batch: RolloutBatch, value_coeff: float, theta=None):
    v, cache = critic_forward(critic, batch.graph, batch.extra, theta)
    err = v - batch.returns
    loss = value_coeff * float(np.mean(err * err))
    dv = 2.0 * value_coeff * err / batch.size
    return loss, critic_backward(critic, batch.graph, dv, cache, theta)


def _clip_norm(g, max_norm):
    n = float(np.sqrt(np.dot(g, g)))
    if max_norm and n > max_norm:
        g = g * (max_norm / n)
    return g, n


@dataclass
class Optimizers:
    policy: Adam
    critic: Adam


def ppo_update(batch: RolloutBatch, policy: PolicyParams, critic: CriticParams, cfg: TrainConfig,
               opt: Optimizers | None = None, rng: np.random.Generator | None = None):
    """Minibatch PPO epochs on ``batch``. Returns ``(policy, critic, diagnostics)``.

    Raises :class:`NonFiniteError` before applying any non-finite step; the
    inputs are never modified in place.
    """
    if batch.size == 0:
        raise ValueError("empty rollout batch")
    rng = rng or np.random.default_rng(cfg.seed)
    opt = opt or Optimizers(Adam(policy.theta.size, cfg.learning_rate),
                            Adam(critic.theta.size, cfg.critic_learning_rate))
    adv = batch.advantages
    if adv.size > 1:
        adv = (adv - adv.mean()) / (adv.std() + 1e-8)
    th_p = policy.theta.copy()
    th_c = critic.theta.copy()
    ratios, clips, kls, plosses, vlosses = [], [], [], [], []
    B = batch.size
    mb = min(cfg.minibatch_size, B)
    for _ in range(cfg.epochs):
        perm = rng.permutation(B)
        for s in range(0, B, mb):
            idx = np.sort(perm[s:s + mb])
            sub = select(batch, idx)
            ploss, pg, info = policy_loss_and_grad(policy, sub, adv[idx], cfg.clip_ratio,
                                                   cfg.entropy_coeff, th_p)
            vloss, vg = value_loss_and_grad(critic, sub, cfg.value_coeff, th_c)
            if not (math.isfinite(ploss) and math.isfinite(vloss)
                    and np.all(np.isfinite(pg)) and np.all(np.isfinite(vg))):
                raise NonFiniteError("non-finite loss or gradient in PPO update")
            pg, _ = _clip_norm(pg, cfg.max_grad_norm)
            vg, _ = _clip_norm(vg, cfg.max_grad_norm)
            th_p = opt.policy.step(th_p, pg)
            th_c = opt.critic.step(th_c, vg)
            ratios.append(float(np.mean(info["ratio"])))
            clips.append(info["clip_fraction"])
            kls.append(info["approx_kl"])
            plosses.append(ploss)
            vlosses.append(vloss)
    diag = {
        "mean_ratio": float(np.mean(ratios)),
        "clip_fraction": float(np.mean(clips)),
        "approx_kl": float(np.mean(kls)),
        "policy_loss": float(np.mean(plosses)),
        "value_loss": float(np.mean(vlosses)),
    }
    return PolicyParams(policy.arch, th_p), CriticParams(critic.hidden, th_c), diag


# training loop -------------------------------------------------------------------

def episode_seeds(seed: int, iteration: int, k: int) -> tuple[int, int]:
    """(scenario seed, episode seed) for episode ``k`` of ``iteration``."""
    s = np.random.SeedSequence([seed, iteration, k]).generate_state(2)
    return int(s[0]), int(s[1])


def _collect_one(args):
    policy, kind, scen_seed, ep_seed, controller, reward_cfg = args
    cfg = make_scenario(kind, scen_seed)
    return run_episode(cfg, GnnPolicy(policy, deterministic=False), ep_seed, controller, reward_cfg)


def collect(policy: PolicyParams, cfg: TrainConfig, iteration: int, controller=None,
            reward_cfg=None, pool=None) -> list[Trajectory]:
    jobs = [(policy, cfg.scenario, *episode_seeds(cfg.seed, iteration, k), controller, reward_cfg)
            for k in range(cfg.episodes_per_iteration)]
    if pool is not None:
        return list(pool.map(_collect_one, jobs))
    return [_collect_one(j) for j in jobs]


@dataclass
class CurvePoint:
    iteration: int
    mean_reward: float
    success_rate: float
    infeasible_steps: float
    clip_fraction: float
    approx_kl: float


@dataclass
class TrainResult:
    policy: PolicyParams
    critic: CriticParams
    curve: list[CurvePoint] = field(default_factory=list)


class TrainingDiverged(RuntimeError):
    def __init__(self, message, result: TrainResult):
        super().__init__(message)
        self.result = result


def train(train_cfg: TrainConfig = TrainConfig(), reward_cfg: RewardConfig = RewardConfig(),
          controller: ControllerConfig | None = None, callback=None) -> TrainResult:
    """Collect episodes with the stochastic policy, then PPO-update; fully seeded.

    ``callback(iteration, point, result)`` runs after every iteration.
    """
    from .policy import PolicyArch

    arch = PolicyArch(train_cfg.hidden)
    policy = init_policy(arch, train_cfg.seed, train_cfg.init_log_std)
    critic = init_critic(train_cfg.hidden, train_cfg.seed + 1)
    opt = Optimizers(Adam(policy.theta.size, train_cfg.learning_rate),
                     Adam(critic.theta.size, train_cfg.critic_learning_rate))
    result = TrainResult(policy, critic)
    pool = None
    if train_cfg.jobs > 1:
        from concurrent.futures import ProcessPoolExecutor
        pool = ProcessPoolExecutor(train_cfg.jobs)
    try:
        for it in range(train_cfg.iterations):
            trajs = collect(result.policy, train_cfg, it, controller, reward_cfg, pool)
            batch = build_batch(trajs, result.policy, result.critic, reward_cfg.gamma,
                                train_cfg.gae_lambda)
            rng = np.random.default_rng([train_cfg.seed, it, 7])
            try:
                new_p, new_c, diag = ppo_update(batch, result.policy, result.critic, train_cfg,
                                                opt, rng)
            except NonFiniteError as exc:
                raise TrainingDiverged(f"iteration {it}: {exc}", result) from exc
            point = CurvePoint(
                it,
                float(np.mean([t.rewards.sum() for t in trajs])),
                float(np.mean([t.success.mean() for t in trajs])),
                float(np.mean([t.infeasible_steps for t in trajs])),
                diag["clip_fraction"],
                diag["approx_kl"],
            )
            result.policy, result.critic = new_p, new_c
            result.curve.append(point)
            log.info("iter %d reward %.3f success %.2f infeasible %.1f kl %.2e", it,
                     point.mean_reward, point.success_rate, point.infeasible_steps, point.approx_kl)
            if callback is not None:
                callback(it, point, result)
    finally:
        if pool is not None:
            pool.shutdown()
    return result


def write_curve(curve, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CURVE_COLUMNS)
        for p in curve:
            d = asdict(p)
            w.writerow([d["iteration"]] + [repr(float(d[c])) for c in CURVE_COLUMNS[1:]])


def read_curve(path) -> list[CurvePoint]:
    with open(path) as fh:
        rows = list(csv.DictReader(fh))
    return [CurvePoint(int(r["iteration"]), *(float(r[c]) for c in CURVE_COLUMNS[1:])) for r in rows]
