import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from cbfnav.controller import LocalView, NeighborAgent
from cbfnav.policy import (ActionDistribution, FixedPolicy, GnnPolicy, PolicyArch, RandomPolicy,
                           gnn_forward, graph_from_observation, init_policy, load_checkpoint,
                           policy_mean, sample_action, save_checkpoint, squash, squashed_log_density, unsquash)
from cbfnav.sim import observe
from cbfnav.types import AgentSpec, AgentState, CbfParams, ObstacleSpec, ParamBounds


def trained_like(seed=0):
    """Random weights with an output layer large enough that the mean actually varies."""
    p = init_policy(PolicyArch(hidden=16), seed=seed)
    rng = np.random.default_rng(seed + 100)
    return type(p)(p.arch, rng.normal(0, 0.5, p.arch.n_params))


def view(me, nbrs=(), obs=()):
    """Dyadic coordinates keep translated differences exact."""
    return LocalView(
        AgentState(me[0], me[1]),
        AgentSpec(0, me[0], (0.0, 0.0), 0.15),
        tuple(NeighborAgent(k, AgentState(p, v), 0.15) for k, (p, v) in nbrs),
        tuple(ObstacleSpec(k, c, 0.5) for k, c in obs),
    )


V = view(((0.5, 0.25), (0.125, -0.5)),
         [(3, ((1.25, 0.75), (0.0, 0.25))), (1, ((-0.5, 0.5), (0.5, 0.0))), (7, ((0.5, 1.5), (-0.25, 0.125)))],
         [(2, (1.5, -0.25)), (0, (-0.75, 0.0))])


def test_translation_invariance_exact():
    p = trained_like()
    a = gnn_forward(p, V)
    for c in [(10.0, -3.0), (-64.0, 0.5), (0.0, 0.0)]:
        b = gnn_forward(p, V.translated(c))
        assert np.array_equal(a.mean, b.mean)


def test_neighbor_order_irrelevant():
    p = trained_like(1)
    a = gnn_forward(p, V).mean
    shuffled = LocalView(V.self_state, V.self_spec, V.neighbor_agents[::-1], V.neighbor_obstacles[::-1])
    assert np.array_equal(a, gnn_forward(p, shuffled).mean)
    # relabelling changes the summation order, which only moves rounding
    relab = LocalView(V.self_state, V.self_spec,
                      tuple(NeighborAgent(10 - n.id, n.state, n.radius) for n in V.neighbor_agents),
                      V.neighbor_obstacles)
    assert np.max(np.abs(a - gnn_forward(p, relab).mean)) <= 1e-9


def test_empty_neighbourhood_is_constant():
    p = trained_like(2)
    a = gnn_forward(p, view(((0.0, 0.0), (0.0, 0.0)))).mean
    b = gnn_forward(p, view(((5.0, -7.0), (0.3, 0.1)))).mean
    assert np.array_equal(a, b)


def test_system_permutation_equivariance():
    p = trained_like(3)
    pos = np.array([[0.0, 0.0], [1.0, 0.5], [-0.5, 1.0]])
    vel = np.array([[0.1, 0.0], [0.0, -0.2], [0.3, 0.3]])
    obs = np.array([[0.5, -0.5]])
    ob = observe(pos, vel, pos, np.ones(3, bool), obs, 2.0)
    m, _ = policy_mean(p, graph_from_observation(ob))
    perm = np.array([2, 0, 1])
    ids = perm  # the agent stored at slot k keeps its original id perm[k]
    ob2 = observe(pos[perm], vel[perm], pos[perm], np.ones(3, bool), obs, 2.0)
    m2, _ = policy_mean(p, graph_from_observation(ob2, agent_order=np.argsort(ids, kind="stable")))
    assert np.max(np.abs(m2 - m[perm])) <= 1e-12


def test_squash_examples():
    assert np.allclose(squash(np.zeros(4)), [5.05, 1.5, 5.05, 1.5], rtol=0, atol=1e-15)
    hi = squash(np.full(4, 1e3))
    lo = squash(np.full(4, -1e3))
    b = ParamBounds()
    assert np.all(hi < b.hi) and np.all(lo > b.lo)
    assert np.allclose(hi, b.hi) and np.allclose(lo, b.lo)
    z = np.array([0.3, -1.2, 2.0, -0.1])
    assert np.allclose(unsquash(squash(z)), z, atol=1e-12)


@given(st.lists(st.floats(-1e6, 1e6, allow_nan=False), min_size=4, max_size=4))
def test_squash_strictly_inside_bounds(raw):
    b = ParamBounds((0.25, 4.0), (1.0, 3.0))
    out = squash(np.array(raw), b)
    assert np.all(out > b.lo) and np.all(out < b.hi)


def test_sample_action_degenerate_std():
    d = ActionDistribution(np.array([0.1, -0.2, 0.3, 0.0]), np.full(4, -np.inf))
    params, lp, z = sample_action(d, np.random.default_rng(0))
    assert np.array_equal(z, d.mean)
    assert params == d.mode()
    assert lp == np.inf


def test_sample_action_reproducible():
    d = ActionDistribution(np.array([0.1, -0.2, 0.3, 0.0]), np.full(4, -0.5))
    a = sample_action(d, np.random.default_rng(7))
    b = sample_action(d, np.random.default_rng(7))
    assert a[0] == b[0] and a[1] == b[1]


def test_log_prob_matches_sampled_frequencies():
    """Integrated squashed density over a bin matches Monte-Carlo frequencies."""
    mean, log_std = np.array([0.4, -0.3, 0.0, 1.0]), np.array([-0.2, 0.1, 0.0, -0.7])
    d = ActionDistribution(mean, log_std)
    b = ParamBounds()
    rng = np.random.default_rng(0)
    z = mean + np.exp(log_std) * rng.standard_normal((10 ** 6, 4))
    p = squash(z)
    grid = np.stack([np.linspace(a, a + w, 4001) for a, w in
                     [(5.0, 0.5), (1.4, 0.05), (2.0, 1.0), (1.6, 0.1)]], axis=1)
    dens = np.exp(squashed_log_density(unsquash(grid, b), mean, log_std, b))
    for k in range(4):
        lo, hi = grid[0, k], grid[-1, k]
        frac = np.mean((p[:, k] >= lo) & (p[:, k] < hi))
        mass = np.trapezoid(dens[:, k], grid[:, k])
        se = np.sqrt(frac * (1 - frac) / z.shape[0])
        assert abs(frac - mass) <= 4 * se, (k, frac, mass)
        s = np.exp(log_std[k])
        zl, zh = unsquash(grid[[0, -1]], b)[:, k]
        exact = stats.norm.cdf((zh - mean[k]) / s) - stats.norm.cdf((zl - mean[k]) / s)
        assert abs(mass - exact) <= 1e-6
    zs = z[:5]
    joint = [d.log_prob(r) for r in zs]
    assert np.allclose(joint, squashed_log_density(zs, mean, log_std, b).sum(axis=1), atol=1e-12)


class _Ob:
    def __init__(self, n, t):
        self.positions = np.zeros((n, 2))
        self.t = t


def test_random_policy_holds_for_period():
    pol = RandomPolicy(period=10)
    rng = np.random.default_rng(0)
    pol.reset(None, rng)
    outs = [pol.act(_Ob(3, t), rng).params for t in range(25)]
    for t in range(25):
        assert np.array_equal(outs[t], outs[10 * (t // 10)])
    assert not np.array_equal(outs[0], outs[10]) and not np.array_equal(outs[10], outs[20])
    with pytest.raises(ValueError):
        RandomPolicy(period=0)


def test_random_policy_is_uniform():
    pol = RandomPolicy(period=1)
    rng = np.random.default_rng(3)
    pol.reset(None, rng)
    draws = np.array([pol.act(_Ob(1, t), rng).params[0] for t in range(10 ** 4)])
    b = ParamBounds()
    u = (draws - b.lo) / (b.hi - b.lo)
    assert np.all((u >= 0) & (u <= 1))
    for k in range(4):
        assert stats.kstest(u[:, k], "uniform").pvalue > 0.01


def test_fixed_policy_constant():
    cp = CbfParams(1.0, 1.5, 2.0, 1.25)
    pol = FixedPolicy(cp)
    for t in (0, 5, 100):
        out = pol.act(_Ob(4, t), None).params
        assert np.array_equal(out, np.tile(cp.as_array(), (4, 1)))
    with pytest.raises(ValueError):
        FixedPolicy(CbfParams(20.0, 1.0, 1.0, 1.0), ParamBounds())
    assert pol.describe() == "fixed:1,1.5,2,1.25"


def test_checkpoint_round_trip(tmp_path):
    p = trained_like(4)
    path = tmp_path / "p.ckpt"
    save_checkpoint(p, path)
    q = load_checkpoint(path)
    assert q.arch == p.arch and q.theta.tobytes() == p.theta.tobytes()
    save_checkpoint(q, tmp_path / "q.ckpt")
    assert path.read_bytes() == (tmp_path / "q.ckpt").read_bytes()


def test_checkpoint_rejects_garbage(tmp_path):
    p = tmp_path / "bad.ckpt"
    p.write_bytes(b"NOTAPOLICY" + bytes(64))
    with pytest.raises(ValueError):
        load_checkpoint(p)
    good = tmp_path / "good.ckpt"
    save_checkpoint(init_policy(PolicyArch(hidden=8)), good)
    good.write_bytes(good.read_bytes()[:-8])
    with pytest.raises(ValueError):
        load_checkpoint(good)


@settings(max_examples=20)
@given(st.integers(0, 10 ** 6))
def test_gnn_policy_params_in_bounds(seed):
    p = trained_like(seed % 50)
    rng = np.random.default_rng(seed)
    pos = rng.uniform(-2, 2, (5, 2))
    ob = observe(pos, np.zeros((5, 2)), pos, np.ones(5, bool), rng.uniform(-2, 2, (3, 2)), 2.0)
    pol = GnnPolicy(p, deterministic=False)
    b = p.arch.bounds
    out = pol.act(ob, rng)
    assert np.all(out.params > b.lo) and np.all(out.params < b.hi)
    assert np.all(np.isfinite(out.log_probs))
