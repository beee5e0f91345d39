"""Command-line entry point: ``cbfnav {simulate,train,gridsearch,eval,render}``.

Exit codes: 0 success (all agents arrived), 1 error or bad input, 2 timeout,
3 safety violation, 4 non-finite training loss. Data goes to files named by
``--out``; stdout carries one-line JSON summaries; logs go to stderr at the
level named by ``CBFNAV_LOG`` (error, info or debug).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import fields

from . import __version__
from .metrics import GridSpec, evaluate, grid_search, write_grid_csv, write_summary_json
from .policy import (FixedPolicy, GnnPolicy, RandomPolicy, load_checkpoint, save_checkpoint)
from .render import write_svg
from .rewards import RewardConfig
from .rl import TrainConfig, TrainingDiverged, train, write_curve
from .scenarios import ScenarioKind, make_scenario
from .sim import check_safety, read_trajectory, run_episode, write_trajectory
from .types import CbfParams, ConfigError, ControllerConfig, ParamBounds, load_config, validate_config

log = logging.getLogger("cbfnav")

EXIT_OK, EXIT_ERROR, EXIT_TIMEOUT, EXIT_UNSAFE, EXIT_NONFINITE = 0, 1, 2, 3, 4


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on usage errors, which would collide with "timeout"
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_ERROR, f"{self.prog}: error: {message}\n")


def _setup_logging():
    level = os.environ.get("CBFNAV_LOG", "error").lower()
    levels = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}
    if level not in levels:
        raise UsageError(f"CBFNAV_LOG must be one of {', '.join(levels)}")
    logging.basicConfig(level=levels[level], stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s", force=True)


# configuration -------------------------------------------------------------------

_CONFIG_SECTIONS = {"controller", "reward", "train"}


def load_run_config(path):
    """Read a run-configuration JSON file into (controller, reward, train kwargs)."""
    ctrl, rew, tr = ControllerConfig(), RewardConfig(), {}
    if path is None:
        return ctrl, rew, tr
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: expected an object")
    unknown = set(doc) - _CONFIG_SECTIONS
    if unknown:
        raise ConfigError(f"{path}: unknown sections {sorted(unknown)}")
    c = dict(doc.get("controller", {}))
    bounds = ParamBounds(tuple(c.pop("zeta_bounds", ParamBounds().zeta)),
                         tuple(c.pop("eta_bounds", ParamBounds().eta)))
    ctrl = _build(ControllerConfig, c, "controller", param_bounds=bounds)
    rew = _build(RewardConfig, doc.get("reward", {}), "reward")
    tr = dict(doc.get("train", {}))
    known = {f.name for f in fields(TrainConfig)}
    bad = set(tr) - known
    if bad:
        raise ConfigError(f"train: unknown keys {sorted(bad)}")
    return ctrl, rew, tr


def _build(cls, d, where, **extra):
    known = {f.name for f in fields(cls)}
    bad = set(d) - known
    if bad:
        raise ConfigError(f"{where}: unknown keys {sorted(bad)}")
    try:
        return cls(**d, **extra)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def resolve_scenario(spec: str):
    """``builtin:NAME`` or ``builtin:NAME:SEED`` or a scenario JSON path."""
    if spec.startswith("builtin:"):
        parts = spec.split(":")
        if len(parts) not in (2, 3):
            raise UsageError(f"bad builtin scenario spec {spec!r}")
        seed = int(parts[2]) if len(parts) == 3 else None
        try:
            return make_scenario(ScenarioKind.parse(parts[1]), seed)
        except ValueError as exc:
            raise UsageError(str(exc)) from exc
    cfg = load_config(spec)
    problems = validate_config(cfg)
    if problems:
        raise ConfigError(f"{spec}: " + "; ".join(problems))
    return cfg


def make_policy_factory(spec: str, bounds: ParamBounds, stochastic: bool = False, period: int = 10):
    """Parse ``fixed:za,ea,zo,eo`` | ``random`` | ``gnn:CHECKPOINT`` into a policy factory."""
    if spec.startswith("fixed:"):
        try:
            vals = [float(v) for v in spec[6:].split(",")]
        except ValueError:
            raise UsageError(f"bad fixed policy {spec!r}") from None
        if len(vals) == 2:
            vals = vals * 2
        if len(vals) != 4:
            raise UsageError("fixed policy needs 2 or 4 comma-separated values")
        params = CbfParams(*vals)
        if not bounds.contains(params):
            raise UsageError(f"fixed parameters {vals} lie outside the bounds")
        return lambda: FixedPolicy(params)
    if spec == "random":
        return lambda: RandomPolicy(bounds, period)
    if spec.startswith("gnn:"):
        path = spec[4:]
        if not path:
            raise UsageError("gnn policy needs a checkpoint path")
        params = load_checkpoint(path)
        return lambda: GnnPolicy(params, deterministic=not stochastic)
    raise UsageError(f"unknown policy {spec!r} (fixed:..., random, gnn:PATH)")


def _emit(obj):
    sys.stdout.write(json.dumps(obj, sort_keys=True) + "\n")
    sys.stdout.flush()


# subcommands ---------------------------------------------------------------------

def cmd_simulate(a) -> int:
    ctrl, rew, _ = load_run_config(a.config)
    config = resolve_scenario(a.scenario)
    factory = make_policy_factory(a.policy, ctrl.param_bounds, a.stochastic, a.period)
    traj = run_episode(config, factory(), a.seed, ctrl, rew)
    write_trajectory(traj, a.out)
    audit = check_safety(traj)
    _emit({"status": traj.status, "steps": traj.steps,
           "arrived": int((traj.done_step >= 0).sum()), "agents": config.n_agents,
           "infeasible_steps": traj.infeasible_steps, "audit_violations": len(audit),
           "violation": traj.violation})
    if traj.status == "violation" or audit:
        return EXIT_UNSAFE
    return EXIT_OK if traj.status == "arrived" else EXIT_TIMEOUT


def cmd_train(a) -> int:
    ctrl, rew, tr = load_run_config(a.config)
    tr.update(seed=a.seed, scenario=a.scenario_family)
    if a.iterations is not None:
        tr["iterations"] = a.iterations
    if a.jobs is not None:
        tr["jobs"] = a.jobs
    try:
        ScenarioKind.parse(tr["scenario"])
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    cfg = _build(TrainConfig, tr, "train")
    os.makedirs(a.out, exist_ok=True)
    ckpt = os.path.join(a.out, "policy.ckpt")
    curve_path = os.path.join(a.out, "curve.csv")

    def progress(it, p, res):
        _emit({"iteration": it, "mean_reward": p.mean_reward, "success_rate": p.success_rate,
               "infeasible_steps": p.infeasible_steps})

    try:
        result = train(cfg, rew, ctrl, callback=progress)
    except TrainingDiverged as exc:
        save_checkpoint(exc.result.policy, ckpt)
        write_curve(exc.result.curve, curve_path)
        log.error("%s; last good checkpoint kept at %s", exc, ckpt)
        return EXIT_NONFINITE
    save_checkpoint(result.policy, ckpt)
    write_curve(result.curve, curve_path)
    return EXIT_OK


def cmd_gridsearch(a) -> int:
    ctrl, _, _ = load_run_config(a.config)
    config = resolve_scenario(a.scenario)
    grid = GridSpec(tuple(_linspace(a.zeta, ctrl.param_bounds.zeta)),
                    tuple(_linspace(a.eta, ctrl.param_bounds.eta)))
    rows = grid_search(config, grid, ctrl, a.seed, a.jobs or 1)
    write_grid_csv(rows, a.out)
    best = rows[0]
    _emit({"rows": len(rows), "best": {"zeta": best.zeta, "eta": best.eta, "spl": best.spl,
                                        "pct_speed": best.pct_speed, "success": best.success},
           "successes": sum(r.success for r in rows)})
    return EXIT_OK


def _linspace(n, bounds):
    import numpy as np

    return np.linspace(bounds[0], bounds[1], n).tolist()


def cmd_eval(a) -> int:
    ctrl, _, _ = load_run_config(a.config)
    if (a.scenario is None) == (a.scenario_family is None):
        raise UsageError("give exactly one of --scenario or --scenario-family")
    if a.scenario is not None:
        family = resolve_scenario(a.scenario)
    else:
        try:
            family = ScenarioKind.parse(a.scenario_family).value
        except ValueError as exc:
            raise UsageError(str(exc)) from exc
    factory = make_policy_factory(a.policy, ctrl.param_bounds, a.stochastic, a.period)
    summary = evaluate(factory, family, a.episodes, a.seed, ctrl, a.jobs or 1)
    write_summary_json(summary, a.out)
    d = summary.to_dict()
    d.pop("episodes")
    _emit(d)
    return EXIT_OK


def cmd_render(a) -> int:
    traj = read_trajectory(a.trajectory)
    write_svg(traj, a.out)
    _emit({"agents": traj.config.n_agents, "steps": traj.steps})
    return EXIT_OK


# parser ----------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="cbfnav", description="Safe multi-agent navigation with tunable CBF-QP controllers.")
    p.add_argument("--version", action="version", version=f"cbfnav {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, scenario=True):
        if scenario:
            sp.add_argument("--scenario", required=True, help="builtin:NAME[:SEED] or a scenario JSON file")
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--out", required=True)
        sp.add_argument("--config", help="run-configuration JSON (controller/reward/train sections)")

    def policy_flags(sp):
        sp.add_argument("--policy", required=True, help="fixed:za,ea,zo,eo | random | gnn:CHECKPOINT")
        sp.add_argument("--stochastic", action="store_true", help="sample the network policy")
        sp.add_argument("--period", type=int, default=10, help="redraw period of the random policy")

    s = sub.add_parser("simulate", help="run one episode and write its trajectory log")
    common(s)
    policy_flags(s)
    s.set_defaults(func=cmd_simulate)

    t = sub.add_parser("train", help="train the network policy; --out is a directory")
    common(t, scenario=False)
    t.add_argument("--scenario-family", default="proof_of_concept")
    t.add_argument("--iterations", type=int)
    t.add_argument("--jobs", type=int)
    t.set_defaults(func=cmd_train)

    g = sub.add_parser("gridsearch", help="fixed-parameter grid search, CSV output")
    common(g)
    g.add_argument("--zeta", type=int, default=10, help="number of zeta grid values")
    g.add_argument("--eta", type=int, default=10, help="number of eta grid values")
    g.add_argument("--jobs", type=int)
    g.set_defaults(func=cmd_gridsearch)

    e = sub.add_parser("eval", help="evaluate a policy over seeded scenarios, JSON output")
    common(e, scenario=False)
    e.add_argument("--scenario")
    e.add_argument("--scenario-family")
    e.add_argument("--episodes", type=int, default=20)
    e.add_argument("--jobs", type=int)
    policy_flags(e)
    e.set_defaults(func=cmd_eval)

    r = sub.add_parser("render", help="draw a trajectory log as SVG")
    r.add_argument("--trajectory", required=True)
    r.add_argument("--out", required=True)
    r.set_defaults(func=cmd_render)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    a = parser.parse_args(argv)
    try:
        _setup_logging()
        if getattr(a, "episodes", 1) < 1:
            raise UsageError("--episodes must be at least 1")
        return a.func(a)
    except (UsageError, ConfigError, OSError, ValueError, KeyError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        sys.stderr.write(f"cbfnav {a.command}: error: {msg}\n")
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())


__all__ = ["main", "build_parser", "load_run_config", "resolve_scenario", "make_policy_factory"]
