"""CBF-parameter policies: the message-passing network and the two baselines.

The network sees only relative quantities. For agent i it computes

    mean_i = F_u( sum_j F_ma(p_j - p_i, v_j - v_i) + sum_l F_mo(p_l - p_i) )

over neighbours within the sensing radius, summed in ascending-id order.
A state-independent log standard deviation completes a diagonal Gaussian
over pre-squash actions; a logistic squash maps samples into the parameter box.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .controller import LocalView
from .nn import MlpSpec, mlp_backward, mlp_forward_cache
from .types import CbfParams, ParamBounds

LOG_2PI = math.log(2.0 * math.pi)
CHECKPOINT_MAGIC = b"CBFNAVPP"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class PolicyArch:
    hidden: int = 64
    bounds: ParamBounds = field(default_factory=ParamBounds)

    @property
    def ma(self) -> MlpSpec:
        return MlpSpec((4, self.hidden, self.hidden))

    @property
    def mo(self) -> MlpSpec:
        return MlpSpec((2, self.hidden, self.hidden))

    @property
    def u(self) -> MlpSpec:
        return MlpSpec((self.hidden, self.hidden, 4))

    @property
    def n_params(self) -> int:
        return self.ma.n_params + self.mo.n_params + self.u.n_params + 4

    def descriptor(self) -> dict:
        return {
            "kind": "gnn",
            "F_ma": list(self.ma.sizes),
            "F_mo": list(self.mo.sizes),
            "F_u": list(self.u.sizes),
            "log_std": 4,
            "activation": "tanh",
            "zeta_bounds": list(self.bounds.zeta),
            "eta_bounds": list(self.bounds.eta),
        }

    @classmethod
    def from_descriptor(cls, d: dict) -> "PolicyArch":
        arch = cls(int(d["F_ma"][1]), ParamBounds(tuple(d["zeta_bounds"]), tuple(d["eta_bounds"])))
        if arch.descriptor() != d:
            raise ValueError("unsupported policy architecture descriptor")
        return arch


@dataclass
class PolicyParams:
    """Flat parameter vector shared by every agent, with its architecture."""

    arch: PolicyArch
    theta: np.ndarray

    def __post_init__(self):
        self.theta = np.asarray(self.theta, dtype=float)
        if self.theta.shape != (self.arch.n_params,):
            raise ValueError(f"parameter count {self.theta.shape} does not match "
                             f"the architecture ({self.arch.n_params})")

    def _split(self, theta=None):
        t = self.theta if theta is None else theta
        a = self.arch.ma.n_params
        b = a + self.arch.mo.n_params
        c = b + self.arch.u.n_params
        return t[:a], t[a:b], t[b:c], t[c:]

    @property
    def theta_ma(self):
        return self._split()[0]

    @property
    def theta_mo(self):
        return self._split()[1]

    @property
    def theta_u(self):
        return self._split()[2]

    @property
    def log_std(self):
        return self._split()[3]

    def copy(self) -> "PolicyParams":
        return PolicyParams(self.arch, self.theta.copy())


def init_policy(arch: PolicyArch | None = None, seed: int = 0, log_std: float = 0.0) -> PolicyParams:
    arch = arch or PolicyArch()
    rng = np.random.default_rng(seed)
    theta = np.concatenate([
        arch.ma.init(rng),
        arch.mo.init(rng),
        arch.u.init(rng, out_scale=0.01),
        np.full(4, float(log_std)),
    ])
    return PolicyParams(arch, theta)


# graph batches ---------------------------------------------------------------

@dataclass
class GraphBatch:
    """Edge lists for ``n`` receiving agents, grouped by receiver in canonical order."""

    n: int
    agent_feats: np.ndarray   # (Ea, 4): p_j - p_i, v_j - v_i
    agent_seg: np.ndarray     # (Ea,) receiver index, nondecreasing
    obs_feats: np.ndarray     # (Eo, 2): p_l - p_i
    obs_seg: np.ndarray       # (Eo,)


def graph_from_observation(ob, rows=None, agent_order=None, obstacle_order=None) -> GraphBatch:
    """Graph for receivers ``rows`` (default: every agent) of one observation.

    ``agent_order``/``obstacle_order`` list indices by ascending id; by default
    index order is id order.
    """
    n_all = ob.positions.shape[0]
    rows = np.arange(n_all) if rows is None else np.asarray(rows)
    aord = np.arange(n_all) if agent_order is None else np.asarray(agent_order)
    oord = np.arange(ob.obstacles.shape[0]) if obstacle_order is None else np.asarray(obstacle_order)
    amask = ob.agent_mask[np.ix_(rows, aord)]
    r, c = np.nonzero(amask)
    src = aord[c]
    dst = rows[r]
    af = np.concatenate([ob.positions[src] - ob.positions[dst],
                         ob.velocities[src] - ob.velocities[dst]], axis=1)
    omask = ob.obstacle_mask[np.ix_(rows, oord)] if oord.size else np.zeros((rows.size, 0), bool)
    ro, co = np.nonzero(omask)
    of = ob.obstacles[oord[co]] - ob.positions[rows[ro]] if oord.size else np.zeros((0, 2))
    return GraphBatch(rows.size, af.reshape(-1, 4), r, of.reshape(-1, 2), ro)


def graph_from_view(view: LocalView) -> GraphBatch:
    view = view.sorted()
    px, py = view.self_state.position
    vx, vy = view.self_state.velocity
    af = [(n.state.position[0] - px, n.state.position[1] - py,
           n.state.velocity[0] - vx, n.state.velocity[1] - vy) for n in view.neighbor_agents]
    of = [(o.center[0] - px, o.center[1] - py) for o in view.neighbor_obstacles]
    return GraphBatch(1, np.array(af, dtype=float).reshape(-1, 4), np.zeros(len(af), dtype=np.intp),
                      np.array(of, dtype=float).reshape(-1, 2), np.zeros(len(of), dtype=np.intp))


def concat_graphs(graphs) -> GraphBatch:
    graphs = list(graphs)
    offs = np.cumsum([0] + [g.n for g in graphs])
    return GraphBatch(
        int(offs[-1]),
        np.concatenate([g.agent_feats for g in graphs]).reshape(-1, 4),
        np.concatenate([g.agent_seg + o for g, o in zip(graphs, offs)]).astype(np.intp),
        np.concatenate([g.obs_feats for g in graphs]).reshape(-1, 2),
        np.concatenate([g.obs_seg + o for g, o in zip(graphs, offs)]).astype(np.intp),
    )


def subset_graph(g: GraphBatch, idx) -> GraphBatch:
    """Receivers ``idx`` (in that order) of ``g``."""
    idx = np.asarray(idx)
    remap = np.full(g.n, -1)
    remap[idx] = np.arange(idx.size)
    # stable regrouping keeps the canonical within-receiver order
    ka = remap[g.agent_seg]
    sel = np.flatnonzero(ka >= 0)
    sel = sel[np.argsort(ka[sel], kind="stable")]
    ko = remap[g.obs_seg]
    selo = np.flatnonzero(ko >= 0)
    selo = selo[np.argsort(ko[selo], kind="stable")]
    return GraphBatch(idx.size, g.agent_feats[sel], ka[sel], g.obs_feats[selo], ko[selo])


class MessageAggregator:
    """Sum of per-edge messages; shared by the policy and the critic."""

    def __init__(self, ma: MlpSpec, mo: MlpSpec):
        self.ma = ma
        self.mo = mo

    def forward(self, th_ma, th_mo, g: GraphBatch):
        H = self.ma.n_out
        agg = np.zeros((g.n, H))
        ma_out, ma_cache = mlp_forward_cache(self.ma, th_ma, g.agent_feats)
        mo_out, mo_cache = mlp_forward_cache(self.mo, th_mo, g.obs_feats)
        np.add.at(agg, g.agent_seg, ma_out)
        np.add.at(agg, g.obs_seg, mo_out)
        return agg, (ma_cache, mo_cache)

    def backward(self, th_ma, th_mo, g: GraphBatch, dagg, cache):
        ma_cache, mo_cache = cache
        g_ma, _ = mlp_backward(self.ma, th_ma, g.agent_feats, dagg[g.agent_seg], ma_cache)
        g_mo, _ = mlp_backward(self.mo, th_mo, g.obs_feats, dagg[g.obs_seg], mo_cache)
        return g_ma, g_mo


def policy_mean(params: PolicyParams, g: GraphBatch, theta=None):
    """Pre-squash means ``(n, 4)`` and the cache needed by :func:`policy_mean_backward`."""
    arch = params.arch
    th_ma, th_mo, th_u, _ = params._split(theta)
    agg_net = MessageAggregator(arch.ma, arch.mo)
    agg, cache = agg_net.forward(th_ma, th_mo, g)
    mean, u_cache = mlp_forward_cache(arch.u, th_u, agg)
    return mean, (agg, cache, u_cache)


def policy_mean_backward(params: PolicyParams, g: GraphBatch, dmean, cache, theta=None):
    arch = params.arch
    th_ma, th_mo, th_u, _ = params._split(theta)
    agg, agg_cache, u_cache = cache
    g_u, dagg = mlp_backward(arch.u, th_u, agg, dmean, u_cache)
    g_ma, g_mo = MessageAggregator(arch.ma, arch.mo).backward(th_ma, th_mo, g, dagg, agg_cache)
    return np.concatenate([g_ma, g_mo, g_u, np.zeros(4)])


# action distribution ---------------------------------------------------------

def _open_bounds(lo, hi):
    return np.nextafter(lo, hi), np.nextafter(hi, lo)


def squash(raw, bounds: ParamBounds | None = None) -> np.ndarray:
    """``lo + (hi - lo) * logistic(raw)`` elementwise, kept strictly inside the box.

    Works on a 4-vector or an ``(n, 4)`` array of pre-squash actions.
    """
    b = bounds or ParamBounds()
    lo, hi = b.lo, b.hi
    out = lo + (hi - lo) * expit(np.asarray(raw, dtype=float))
    olo, ohi = _open_bounds(lo, hi)
    return np.clip(out, olo, ohi)


def unsquash(params, bounds: ParamBounds | None = None) -> np.ndarray:
    b = bounds or ParamBounds()
    s = (np.asarray(params, dtype=float) - b.lo) / (b.hi - b.lo)
    return np.log(s) - np.log1p(-s)


def _log_sigmoid_deriv(z):
    # log(s(z) * (1 - s(z))), overflow-free
    a = np.abs(z)
    return -a - 2.0 * np.log1p(np.exp(-a))


def gaussian_log_prob(z, mean, log_std) -> np.ndarray:
    """Per-dimension diagonal-Gaussian log density of pre-squash actions."""
    std = np.exp(log_std)
    e = (z - mean) / std
    return -0.5 * e * e - log_std - 0.5 * LOG_2PI


def squashed_log_density(z, mean, log_std, bounds: ParamBounds | None = None) -> np.ndarray:
    """Per-dimension log density of ``squash(z)`` in parameter space."""
    b = bounds or ParamBounds()
    return gaussian_log_prob(z, mean, log_std) - np.log(b.hi - b.lo) - _log_sigmoid_deriv(z)


@dataclass(frozen=True)
class ActionDistribution:
    mean: np.ndarray
    log_std: np.ndarray
    bounds: ParamBounds = field(default_factory=ParamBounds)

    def mode(self) -> CbfParams:
        return CbfParams.from_array(squash(self.mean, self.bounds))

    def log_prob(self, z) -> float:
        """Log density of the squashed action produced by pre-squash sample ``z``."""
        return float(np.sum(squashed_log_density(np.asarray(z, float), self.mean, self.log_std,
                                                 self.bounds)))


def sample_action(dist: ActionDistribution, rng: np.random.Generator):
    """Draw ``(CbfParams, log_prob, z)``: Gaussian pre-squash sample, squashed into the box."""
    eps = rng.standard_normal(4)
    z = dist.mean + np.exp(dist.log_std) * eps
    if not np.all(np.isfinite(dist.log_std)):
        z = np.where(np.isneginf(dist.log_std), dist.mean, z)
        lp = math.inf
    else:
        lp = dist.log_prob(z)
    return CbfParams.from_array(squash(z, dist.bounds)), lp, z


def gnn_forward(params: PolicyParams, view: LocalView) -> ActionDistribution:
    """Action distribution for one agent from its local view alone."""
    mean, _ = policy_mean(params, graph_from_view(view))
    return ActionDistribution(mean[0].copy(), params.log_std.copy(), params.arch.bounds)


# policies used by the simulator ------------------------------------------------

@dataclass
class PolicyOutput:
    params: np.ndarray                 # (N, 4) squashed CBF parameters
    actions: np.ndarray | None = None  # (N, 4) pre-squash samples
    log_probs: np.ndarray | None = None


class FixedPolicy:
    """The same parameters for every agent at every step."""

    stochastic = False

    def __init__(self, params: CbfParams, bounds: ParamBounds | None = None):
        if bounds is not None and not bounds.contains(params):
            raise ValueError(f"{params} lies outside the parameter bounds")
        self.params = params
        self._row = params.as_array()

    def reset(self, config, rng):
        pass

    def act(self, ob, rng) -> PolicyOutput:
        return PolicyOutput(np.tile(self._row, (ob.positions.shape[0], 1)))

    def describe(self) -> str:
        a = self._row
        return f"fixed:{a[0]:g},{a[1]:g},{a[2]:g},{a[3]:g}"


def fixed_policy(params: CbfParams, bounds: ParamBounds | None = None) -> FixedPolicy:
    return FixedPolicy(params, bounds)


class RandomPolicy:
    """Uniform parameters per agent, redrawn every ``period`` steps and held in between."""

    stochastic = False

    def __init__(self, bounds: ParamBounds | None = None, period: int = 10):
        if period < 1:
            raise ValueError("period must be at least 1")
        self.bounds = bounds or ParamBounds()
        self.period = period
        self._cur = None

    def reset(self, config, rng):
        self._cur = None

    def act(self, ob, rng) -> PolicyOutput:
        n = ob.positions.shape[0]
        if self._cur is None or ob.t % self.period == 0:
            self._cur = rng.uniform(self.bounds.lo, self.bounds.hi, size=(n, 4))
        return PolicyOutput(self._cur.copy())

    def describe(self) -> str:
        return f"random(period={self.period})"


def random_policy(bounds: ParamBounds | None = None, period: int = 10) -> RandomPolicy:
    return RandomPolicy(bounds, period)


class GnnPolicy:
    """Network policy; ``deterministic`` uses the squashed mean instead of sampling."""

    def __init__(self, params: PolicyParams, deterministic: bool = True):
        self.params = params
        self.deterministic = deterministic
        self._aord = None
        self._oord = None

    @property
    def stochastic(self) -> bool:
        return not self.deterministic

    def reset(self, config, rng):
        self._aord = np.argsort([a.id for a in config.agents], kind="stable")
        self._oord = np.argsort([o.id for o in config.obstacles], kind="stable")

    def act(self, ob, rng) -> PolicyOutput:
        g = graph_from_observation(ob, None, self._aord, self._oord)
        mean, _ = policy_mean(self.params, g)
        bounds = self.params.arch.bounds
        if self.deterministic:
            return PolicyOutput(squash(mean, bounds))
        log_std = self.params.log_std
        z = mean + np.exp(log_std) * rng.standard_normal(mean.shape)
        lp = np.sum(squashed_log_density(z, mean, log_std, bounds), axis=1)
        return PolicyOutput(squash(z, bounds), z, lp)

    def describe(self) -> str:
        return "gnn"


# checkpoints -----------------------------------------------------------------

def save_checkpoint(params: PolicyParams, path) -> None:
    """Magic, format version, JSON descriptor, then little-endian float64 parameters."""
    desc = json.dumps(params.arch.descriptor(), sort_keys=True, separators=(",", ":")).encode()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<II", CHECKPOINT_VERSION, len(desc)))
        fh.write(desc)
        fh.write(struct.pack("<Q", params.theta.size))
        fh.write(params.theta.astype("<f8").tobytes())


def load_checkpoint(path) -> PolicyParams:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:8] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not a policy checkpoint")
    version, dlen = struct.unpack_from("<II", data, 8)
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    off = 16
    arch = PolicyArch.from_descriptor(json.loads(data[off:off + dlen]))
    off += dlen
    (count,) = struct.unpack_from("<Q", data, off)
    off += 8
    if count != arch.n_params or len(data) != off + 8 * count:
        raise ValueError(f"{path}: truncated or inconsistent checkpoint")
    theta = np.frombuffer(data, dtype="<f8", count=count, offset=off).astype(float)
    return PolicyParams(arch, theta)
