"""The compiled kernels and the pure-Python fallback must agree bit for bit."""

import os
import subprocess
import sys

import numpy as np
import pytest

from cbfnav import _backend, _pykernels
from cbfnav.policy import RandomPolicy
from cbfnav.scenarios import make_scenario
from cbfnav.sim import run_episode
from cbfnav.types import ControllerConfig

try:
    from cbfnav import _ckernels
except ImportError:
    _ckernels = None

needs_c = pytest.mark.skipif(_ckernels is None, reason="compiled kernels not built")


def same(a, b):
    if isinstance(a, (tuple, list)):
        return len(a) == len(b) and all(same(x, y) for x, y in zip(a, b))
    if isinstance(a, np.ndarray) or isinstance(b, np.ndarray):
        return np.asarray(a).tobytes() == np.asarray(b).tobytes()
    if isinstance(a, float) and np.isnan(a):
        return isinstance(b, float) and np.isnan(b)
    return a == b


def test_backend_selected():
    assert _backend.BACKEND == ("cython" if _ckernels is not None else "python")
    assert _pykernels.BACKEND == "python"


@needs_c
def test_solve_qp_bit_identical():
    rng = np.random.default_rng(0)
    lo, hi = np.array([-0.5, -0.5, -np.inf]), np.array([0.5, 0.5, np.inf])
    for _ in range(2000):
        m = int(rng.integers(0, 15))
        A = np.ascontiguousarray(rng.uniform(-5, 5, (m, 3)))
        b = np.ascontiguousarray(rng.uniform(-5, 5, m))
        q = np.array([1.0, 1.0, float(rng.choice([1.0, 10.0, 1000.0]))])
        args = (3, q, A, b, lo, hi)
        assert same(_ckernels.solve_qp(*args), _pykernels.solve_qp(*args))
        assert same(_ckernels.feasible_point(3, A, b, lo, hi), _pykernels.feasible_point(3, A, b, lo, hi))


@needs_c
def test_control_step_bit_identical():
    cfg = make_scenario("proof_of_concept", 1)
    traj = run_episode(cfg, RandomPolicy(), 1)
    arr = cfg.arrays()
    ctrl = ControllerConfig()
    checked = 0
    for t in range(0, traj.steps, 3):
        vel = np.ascontiguousarray(traj.velocities_at(t))
        args = (np.ascontiguousarray(traj.positions[t]), vel, arr["goal"], arr["radius"],
                traj.active[t].astype(np.int8), arr["obs"], arr["obs_r"],
                np.ascontiguousarray(traj.params[t]), cfg.sensing_radius, ctrl.epsilon, ctrl.xi,
                cfg.u_max, 2.0 * cfg.u_max * cfg.dt)
        assert same(_ckernels.control_step(*args), _pykernels.control_step(*args))
        checked += 1
    assert checked > 10


def _simulate(tmp_path, name, backend):
    env = dict(os.environ)
    env.pop("CBFNAV_BACKEND", None)
    if backend:
        env["CBFNAV_BACKEND"] = backend
    out = tmp_path / name
    code = ("import sys; from cbfnav import _backend; from cbfnav.cli import main;"
            "print(_backend.BACKEND, file=sys.stderr); sys.exit(main(sys.argv[1:]))")
    p = subprocess.run([sys.executable, "-c", code, "simulate", "--scenario", "builtin:proof_of_concept:3",
                        "--policy", "random", "--seed", "3", "--out", str(out)],
                       env=env, capture_output=True, text=True)
    return p, out


def test_python_fallback_via_environment(tmp_path):
    p, out_py = _simulate(tmp_path, "py.jsonl", "python")
    assert p.returncode in (0, 2), p.stderr
    assert p.stderr.strip().splitlines()[0] == "python"
    if _ckernels is not None:
        q, out_c = _simulate(tmp_path, "c.jsonl", None)
        assert q.stderr.strip().splitlines()[0] == "cython"
        assert out_py.read_bytes() == out_c.read_bytes()
