"""Compare the compiled and pure-Python kernels on QP solves and full control steps.

    python3 benchmarks/bench_kernels.py [--problems 2000] [--steps 200] [--repeat 3]

Both backends are run on the same inputs; the script also reports whether
their outputs agree bit for bit.
"""

import argparse
import time

import numpy as np

from cbfnav import _pykernels
from cbfnav.policy import FixedPolicy
from cbfnav.scenarios import make_scenario
from cbfnav.sim import run_episode
from cbfnav.types import CbfParams, ControllerConfig

try:
    from cbfnav import _ckernels
except ImportError:
    _ckernels = None


def random_problems(k, seed=0):
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(k):
        m = int(rng.integers(0, 15))
        A = np.ascontiguousarray(rng.uniform(-5, 5, (m, 3)))
        b = np.ascontiguousarray(rng.uniform(-5, 5, m))
        q = np.array([1.0, 1.0, float(rng.uniform(0.5, 20))])
        lo = np.array([-0.5, -0.5, -np.inf])
        hi = np.array([0.5, 0.5, np.inf])
        out.append((3, q, A, b, lo, hi))
    return out


def episode_states(steps, seed=0):
    """Per-step kernel inputs recorded from a random-parameter proof-of-concept run."""
    cfg = make_scenario("proof_of_concept", seed)
    traj = run_episode(cfg, FixedPolicy(CbfParams(3.4, 1.2, 3.4, 1.2)), seed)
    arr = cfg.arrays()
    ctrl = ControllerConfig()
    rng = np.random.default_rng(seed)
    states = []
    L = min(steps, traj.positions.shape[0] - 1)
    for t in range(L):
        vel = traj.controls[t - 1] if t > 0 else np.zeros_like(traj.controls[0])
        params = rng.uniform([0.1, 1, 0.1, 1], [10, 2, 10, 2], (cfg.n_agents, 4))
        states.append((np.ascontiguousarray(traj.positions[t]), np.ascontiguousarray(vel),
                       arr["goal"], arr["radius"], np.ones(cfg.n_agents, np.int8),
                       arr["obs"], arr["obs_r"], params, cfg.sensing_radius, ctrl.epsilon,
                       ctrl.xi, cfg.u_max, 2.0 * cfg.u_max * cfg.dt))
    return states


def timed(fn, items, repeat):
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        res = [fn(*it) for it in items]
        best = min(best, time.perf_counter() - t0)
    return best, res


def same(a, b):
    if isinstance(a, np.ndarray) or isinstance(b, np.ndarray):
        return np.array_equal(np.asarray(a), np.asarray(b), equal_nan=True) and \
            np.asarray(a).tobytes() == np.asarray(b).tobytes()
    if isinstance(a, (tuple, list)) and isinstance(b, (tuple, list)):
        return len(a) == len(b) and all(same(x, y) for x, y in zip(a, b))
    if isinstance(a, float) and isinstance(b, float) and np.isnan(a) and np.isnan(b):
        return True
    return a == b


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--problems", type=int, default=2000)
    ap.add_argument("--steps", type=int, default=200)
    ap.add_argument("--repeat", type=int, default=3)
    a = ap.parse_args()

    backends = [("python", _pykernels)]
    if _ckernels is not None:
        backends.insert(0, ("cython", _ckernels))
    else:
        print("compiled kernels unavailable; timing the fallback only")

    probs = random_problems(a.problems)
    states = episode_states(a.steps)
    results = {}
    print(f"{'kernel':<14}{'backend':<9}{'calls':>7}{'total s':>10}{'us/call':>10}")
    for kname, items, attr in (("solve_qp", probs, "solve_qp"), ("control_step", states, "control_step")):
        for bname, mod in backends:
            dt, res = timed(getattr(mod, attr), items, a.repeat)
            results[(kname, bname)] = (dt, res)
            print(f"{kname:<14}{bname:<9}{len(items):>7}{dt:>10.4f}{1e6 * dt / max(len(items), 1):>10.1f}")
        if len(backends) == 2:
            (tc, rc), (tp, rp) = results[(kname, "cython")], results[(kname, "python")]
            agree = all(same(x, y) for x, y in zip(rc, rp))
            print(f"{kname:<14}speedup {tp / tc:6.1f}x   outputs identical: {agree}")


if __name__ == "__main__":
    main()
