"""Run orchestration: build agents from a config, execute (config x seed)
cells, fan out over a worker pool, and benchmark the regularizer overhead.

Every cell derives its named random streams from the seed alone, with the
environment/task streams independent of agent configuration, so different
algorithm arms face identical task sequences at the same seed (paired
comparisons). Cells always execute in spawned worker processes, also when
--jobs is 1, so parallelism cannot change results.
"""

from __future__ import annotations

import multiprocessing as mp
import os
import time
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__, agent, config as config_mod, envs, net
from .runlog import RunLogWriter

_STREAM_KEYS = ("init", "env", "policy", "update", "eval", "snp",
                "env_goal", "eval_env_goal")


def seed_offset() -> int:
    return int(os.environ.get("PLASTIC_RL_SEED_OFFSET", "0"))


def make_streams(seed: int) -> dict:
    root = np.random.SeedSequence(seed)
    children = root.spawn(len(_STREAM_KEYS))
    return {k: np.random.default_rng(s) for k, s in zip(_STREAM_KEYS, children)}


def make_env(spec: config_mod.EnvSpec, goal_rng: np.random.Generator):
    if spec.kind == "gridworld":
        return envs.GridworldEnv()
    return envs.PointGoalEnv(goal_rng)


def make_task_sequence(cfg: config_mod.ExperimentConfig, env_rng: np.random.Generator):
    count = -(-cfg.schedule.total_steps // cfg.schedule.change_period)  # ceil
    if cfg.env.kind == "gridworld":
        return envs.generate_gridworld_tasks(count, cfg.schedule.change_period, env_rng)
    bounds = envs.PointGoalBounds(cfg.env.action_gain_low, cfg.env.action_gain_high,
                                  cfg.env.min_change)
    return envs.generate_pointgoal_tasks(count, cfg.schedule.change_period,
                                         env_rng, bounds)


def build_agents(cfg: config_mod.ExperimentConfig, env, init_rng: np.random.Generator):
    """Actor + critic with the reference output-layer gains (small for the
    policy head so the initial policy is near-uniform, 1 for the value head)."""
    if env.discrete:
        policy = agent.CategoricalPolicy(
            net.build_mlp(cfg.arch, env.obs_dim, env.n_actions, init_rng,
                          out_gain=0.01))
    else:
        policy = agent.GaussianPolicy(
            net.build_mlp(cfg.arch, env.obs_dim, env.action_dim, init_rng,
                          out_gain=0.01), env.action_dim)
    critic = net.build_mlp(cfg.arch, env.obs_dim, 1, init_rng, out_gain=1.0)
    return policy, critic


def cell_paths(out_dir, name: str, seed: int):
    base = Path(out_dir) / f"{name}_seed{seed}"
    return base.with_suffix(".runlog"), base.with_suffix(".ckpt")


def run_cell(cfg: config_mod.ExperimentConfig, seed: int, out_dir=None,
             sink=None, diagnostics: bool = True) -> dict:
    """Execute one (config, seed) cell.

    With out_dir set, writes <name>_seed<seed>.runlog plus a final checkpoint
    and returns a summary; with sink set, streams records there instead.
    """
    streams = make_streams(seed)
    env = make_env(cfg.env, streams["env_goal"])
    eval_env = make_env(cfg.env, streams["eval_env_goal"])
    task_seq = make_task_sequence(cfg, streams["env"])
    policy, critic = build_agents(cfg, env, streams["init"])

    baseline = cfg.reg.baseline_spec()
    parseval = cfg.reg.parseval_spec()
    snapshot = None
    if baseline is not None and baseline.kind in ("regen", "wregen"):
        snapshot = agent.snapshot_params(policy, critic)
    weight_decay = baseline.weight_decay if (
        baseline is not None and baseline.kind == "shrink_perturb") else 0.0
    optimizer = agent.AdamW(agent.trainable_params(policy, critic),
                            lr=cfg.agent.learning_rate, eps=cfg.agent.adam_eps,
                            weight_decay=weight_decay)

    writer = None
    records = []
    if out_dir is not None:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
        log_path, ckpt_path = cell_paths(out_dir, cfg.name, seed)
        writer = RunLogWriter(log_path, {
            "version": 1,
            "name": cfg.name,
            "seed": seed,
            "config": config_mod.to_dict(cfg),
            "code_version": __version__,
            "timestamp": datetime.now(timezone.utc).isoformat(),
        })

    def emit(record: dict) -> None:
        if writer is not None:
            writer.write(record)
        if sink is not None:
            sink(record)
        records.append(record)

    summary = {"name": cfg.name, "seed": seed, "ok": True, "reason": ""}
    try:
        result = agent.train_loop(
            env, eval_env, policy, critic, optimizer, cfg.agent, cfg.schedule,
            task_seq, streams, emit, parseval=parseval, baseline=baseline,
            snapshot=snapshot, diagnostics=diagnostics,
        )
        summary.update(result)
    except agent.TrainingAborted as e:
        emit({"kind": "abort", "step": e.step, "reason": e.reason})
        summary.update({"ok": False, "reason": e.reason, "steps": e.step})
    finally:
        if writer is not None:
            writer.close()
    if out_dir is not None:
        extras = {"log_std": policy.log_std} if policy.kind == "gaussian" else {}
        net.save_checkpoint(
            ckpt_path, {"actor": policy.mlp, "critic": critic}, extras=extras,
            meta={"seed": seed, "name": cfg.name, "steps": summary.get("steps", 0)},
        )
    return summary


def _cell_entry(payload):
    cfg_dict, seed, out_dir = payload
    cfg = config_mod.from_dict(cfg_dict)
    try:
        return run_cell(cfg, seed, out_dir=out_dir)
    except Exception as e:  # mark the cell failed, let the siblings finish
        return {"name": cfg.name, "seed": seed, "ok": False,
                "reason": f"{type(e).__name__}: {e}"}


def run_many(cfg: config_mod.ExperimentConfig, out_dir=None, jobs: int = 1,
             seeds=None) -> list[dict]:
    """Run every (config, seed) cell on a spawned worker pool.

    Cells run in subprocesses even for jobs=1 so that --jobs never changes
    numerical results; BLAS threading in workers is pinned to one thread.
    """
    out_dir = out_dir if out_dir is not None else cfg.out_dir
    offset = seed_offset()
    seeds = [s + offset for s in (seeds if seeds is not None else cfg.seeds)]
    cfg_dict = config_mod.to_dict(cfg)
    payloads = [(cfg_dict, seed, out_dir) for seed in seeds]
    os.environ.setdefault("OPENBLAS_NUM_THREADS", "1")
    os.environ.setdefault("OMP_NUM_THREADS", "1")
    ctx = mp.get_context("spawn")
    with ctx.Pool(processes=max(1, jobs)) as pool:
        results = pool.map(_cell_entry, payloads)
    return results


def warm_kernels() -> None:
    """Trigger numba JIT compilation outside any timed region."""
    from . import linalg

    small = np.eye(2)
    linalg.matmul(small, small)
    linalg.svd_values(small)


def bench(cfg: config_mod.ExperimentConfig, repetitions: int = 3,
          steps: int = 5000) -> dict:
    """Measure the wall-clock cost of the orthogonality regularizer.

    Runs the full training cycle (rollouts, updates, cadenced evaluation and
    diagnostics) for the configured arm and for an identical arm with the
    regularizer disabled, on matched seeds. Reports the per-update wall time
    of each repetition (total time / update count), the median across
    repetitions, steps/second, and the relative overhead.
    """
    if cfg.reg.kind != "parseval":
        raise config_mod.ConfigError(
            "reg.kind: bench compares a parseval config against the same "
            f"config with the regularizer off, got {cfg.reg.kind!r}")
    warm_kernels()
    import copy as _copy

    arms = {}
    for label, reg_kind in (("parseval", "parseval"), ("baseline", "none")):
        arm_cfg = _copy.deepcopy(cfg)
        arm_cfg.reg.kind = reg_kind
        arm_cfg.schedule = agent.Schedule(
            total_steps=steps, change_period=cfg.schedule.change_period,
            eval_cadence=cfg.schedule.eval_cadence,
            diag_cadence=cfg.schedule.diag_cadence,
            eval_episodes=cfg.schedule.eval_episodes,
        )
        per_update = []
        per_second = []
        for rep in range(repetitions):
            seed = 10_000 + rep
            start = time.perf_counter()
            summary = run_cell(arm_cfg, seed, out_dir=None)
            elapsed = time.perf_counter() - start
            updates = max(1, summary.get("updates", 1))
            per_update.append(elapsed / updates)
            per_second.append(summary.get("steps", steps) / elapsed)
        arms[label] = {
            "per_update_seconds": per_update,
            "median_per_update_seconds": float(np.median(per_update)),
            "steps_per_second": float(np.median(per_second)),
        }
    on = arms["parseval"]["median_per_update_seconds"]
    off = arms["baseline"]["median_per_update_seconds"]
    return {
        "arms": arms,
        "overhead_pct": 100.0 * (on - off) / off,
        "repetitions": repetitions,
        "steps_per_repetition": steps,
    }
