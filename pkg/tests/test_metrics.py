import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from cbfnav.metrics import (GridSpec, evaluate, episode_metrics, grid_search, pct_speed, read_grid_csv,
                            reference_speed, sort_grid, spl, summarize, write_grid_csv, _grid_point)
from cbfnav.policy import FixedPolicy, RandomPolicy
from cbfnav.scenarios import make_scenario
from cbfnav.sim import Trajectory, run_episode
from cbfnav.types import AgentSpec, CbfParams, WorldConfig

MID = CbfParams(3.4, 1.2, 3.4, 1.2)


def test_spl_examples():
    assert spl([(True, 3.0, 3.0)]) == 1.0
    assert spl([(False, 3.0, 3.0)]) == 0.0
    assert spl([(True, 4.0, 5.0), (False, 2.0, 9.0)]) == pytest.approx(0.4, abs=1e-15)
    # a path shorter than the straight line (rounding) counts as optimal
    assert spl([(True, 4.0, 4.0 - 1e-12)]) == 1.0
    with pytest.raises(ValueError):
        spl([])
    with pytest.raises(ValueError):
        spl([(True, 0.0, 1.0)])


@given(st.lists(st.tuples(st.booleans(), st.floats(0.1, 10), st.floats(0, 20)), min_size=1, max_size=8),
       st.integers(0, 7), st.floats(0, 5))
def test_spl_monotone_in_path_length(recs, k, extra):
    recs = [(s, sh, max(a, sh)) for s, sh, a in recs]
    k %= len(recs)
    longer = list(recs)
    s, sh, a = longer[k]
    longer[k] = (s, sh, a + extra)
    assert spl(longer) <= spl(recs) + 1e-15
    assert 0.0 <= spl(recs) <= 1.0


def one_agent_traj(speeds, arrive=True):
    """1-agent trajectory moving along +x with the given per-step speeds."""
    u = np.array([[[s, 0.0]] for s in speeds])
    P = np.concatenate([[[[0.0, 0.0]]], np.cumsum(u * 0.05, axis=0)])
    L = len(speeds)
    goal = tuple(P[-1, 0]) if arrive else (10.0, 0.0)
    cfg = WorldConfig((AgentSpec(0, (0.0, 0.0), goal, 0.15),), ())
    done = np.array([L if arrive else -1])
    return Trajectory(cfg, 0, P, u, np.zeros((L, 1, 4)), np.ones((L, 1), bool),
                      np.ones((L, 1), bool), np.zeros((L, 1)), done,
                      status="arrived" if arrive else "timeout")


def test_pct_speed_examples():
    assert pct_speed(one_agent_traj([0.5] * 6), 0, 0.5) == 1.0
    assert pct_speed(one_agent_traj([0.0] * 6, arrive=False), 0, 0.5) == 0.0
    assert pct_speed(one_agent_traj([0.5, 0.3, 0.4]), 0, 0.5) == pytest.approx(0.8, abs=1e-15)
    with pytest.raises(ValueError):
        pct_speed(one_agent_traj([0.5]), 0, 0.0)


def test_pct_speed_bounded_by_box():
    traj = run_episode(make_scenario("proof_of_concept", 2), RandomPolicy(), 2)
    cfg = traj.config
    for i in range(cfg.n_agents):
        assert pct_speed(traj, i, 0.1) <= reference_speed(cfg) / 0.1 + 1e-12
        assert 0.0 <= pct_speed(traj, i, reference_speed(cfg)) <= 1.0


def test_episode_metrics_invariants():
    traj = run_episode(make_scenario("cross", 0), FixedPolicy(MID), 0)
    m = episode_metrics(traj)
    for s, p, sl in zip(m.success, m.path_length, m.straight_line_length):
        if s:
            assert p >= sl - 0.05 - 1e-9  # arrival radius shortens the recorded path
    assert 0 <= m.spl <= 1 and 0 <= m.pct_speed <= 1
    assert m.episode_steps == traj.steps and m.status == traj.status


def test_free_space_grid_all_succeed():
    rows = grid_search(make_scenario("free_space"))
    assert len(rows) == 100
    assert all(r.success for r in rows)
    assert all(r.spl == pytest.approx(rows[0].spl, abs=1e-15) for r in rows)
    assert rows[0].spl > 0.95


def test_singularity_grid_all_fail():
    rows = grid_search(make_scenario("singularity"))
    assert len(rows) == 100
    assert not any(r.success for r in rows)
    assert all(r.spl == 0.0 for r in rows)


def test_grid_order_invariance():
    cfg = make_scenario("proof_of_concept")
    grid = GridSpec((0.1, 5.05, 10.0), (1.0, 2.0))
    rows = grid_search(cfg, grid)
    shuffled = [(cfg, z, e, None, 0) for z, e in reversed(grid.points())]
    assert sort_grid([_grid_point(t) for t in shuffled]) == rows
    assert len(rows) == 6


def test_grid_sort_order():
    rows = grid_search(make_scenario("proof_of_concept"), GridSpec((0.1, 5.05, 10.0), (1.0, 1.5, 2.0)))
    keys = [(-r.spl, -r.pct_speed, r.zeta, r.eta) for r in rows]
    assert keys == sorted(keys)


def test_grid_csv_round_trip(tmp_path):
    rows = grid_search(make_scenario("free_space"), GridSpec((0.1, 10.0), (1.0, 2.0)))
    write_grid_csv(rows, tmp_path / "g.csv")
    assert read_grid_csv(tmp_path / "g.csv") == rows
    assert (tmp_path / "g.csv").read_text().splitlines()[0] == \
        "zeta,eta,spl,pct_speed,success,infeasible_steps,success_rate"


def test_evaluate_single_fixed_scenario_has_zero_std():
    s = evaluate(lambda: FixedPolicy(MID), make_scenario("cross", 0), 1)
    assert s.n_episodes == 1 and s.spl_std == 0.0 and s.pct_speed_std == 0.0


def test_evaluate_records_and_aggregates():
    s = evaluate(lambda: RandomPolicy(), "proof_of_concept", 20, seed=3)
    assert s.n_episodes == 20 and len(s.episodes) == 20
    r = summarize(s.episodes)
    for f in ("spl_mean", "spl_std", "pct_speed_mean", "pct_speed_std", "success_rate_mean",
              "success_rate_std"):
        assert abs(getattr(r, f) - getattr(s, f)) <= 1e-12
    spls = [e["spl"] for e in s.episodes]
    assert abs(s.spl_mean - math.fsum(spls) / 20) <= 1e-12
    assert len({e["scenario_hash"] for e in s.episodes}) > 1


def test_evaluate_deterministic():
    a = evaluate(lambda: RandomPolicy(), "cross", 3, seed=9)
    b = evaluate(lambda: RandomPolicy(), "cross", 3, seed=9)
    assert a.to_dict() == b.to_dict()
    with pytest.raises(ValueError):
        evaluate(lambda: RandomPolicy(), "cross", 0)
