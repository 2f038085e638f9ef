"""Training orchestration: seeded runs, metrics, manifests, checkpoints.

A run directory is owned exclusively by one process through a lock file.
Each seed writes metrics.csv (append-only, one row per update), a manifest
(written atomically at start, extended at end), and parameter checkpoints.
Checkpoints are policy snapshots keyed by parameter path, not optimizer
resume points.  All rows are formatted with repr so two runs of the same
seed produce byte-identical columns apart from wallclock_s.
"""
import csv
import hashlib
import json
import os
import time
from dataclasses import dataclass
from datetime import datetime, timezone

import numpy as np

from agentmixer import __version__, nn
from agentmixer.config import parse_config, serialize_config
from agentmixer.learners import (AsymmetricImitationLearner,
                                 CorrelatedPpoLearner, IndependentPpoLearner)
from agentmixer.rollout import RolloutWorkers, evaluate, evaluate_centralized

METRIC_COLUMNS = [
    "step", "env_steps", "mean_train_return", "mean_eval_return", "eval_std",
    "policy_loss", "value_loss", "entropy", "approx_kl", "clip_frac",
    "igc_consistency_rate", "wallclock_s",
]

OUTPUT_ENV_VAR = "AGENTMIXER_OUT"


def output_root(cfg):
    return os.environ.get(OUTPUT_ENV_VAR) or cfg.output_dir


def config_hash(cfg):
    return hashlib.sha256(serialize_config(cfg).encode("utf-8")).hexdigest()


def make_learner(cfg, seed):
    env = cfg.make_env()
    common = dict(window=cfg.window,
                  include_last_action=cfg.include_last_action)
    if cfg.algorithm == "agentmixer":
        taus = [cfg.mixer_tau] * env.n_agents if env.discrete else None
        return CorrelatedPpoLearner(
            env, cfg.ppo, seed, use_mixer=True, taus=taus,
            mixer_channels=cfg.mixer_channels,
            mixer_agent_hidden=cfg.mixer_agent_hidden,
            mixer_channel_hidden=cfg.mixer_channel_hidden,
            mixer_blocks=cfg.mixer_blocks,
            mixer_noise_dim=cfg.mixer_noise_dim, **common)
    if cfg.algorithm == "ippo":
        return IndependentPpoLearner(env, cfg.ppo, seed, **common)
    return AsymmetricImitationLearner(env, cfg.ppo, cfg.distill, seed,
                                      **common)


def decentralized_heads(learner):
    return learner.students if hasattr(learner, "students") else learner.heads


# -------------------------------------------------------------- checkpoints
# A run checkpoint is the binary parameter dump plus a .json sidecar holding
# the resolved config, so eval/analyze can rebuild the exact learner.

def save_checkpoint(path, learner, cfg, seed):
    nn.save_checkpoint(path, learner.store, seed)
    _atomic_json(path + ".json", {
        "config": serialize_config(cfg), "seed": int(seed),
        "algorithm": cfg.algorithm, "env": cfg.env_name,
        "version": __version__})


def load_checkpoint(path):
    """Rebuild the learner a checkpoint was saved from.

    The sidecar config reconstructs the exact parameter layout; the saved
    arrays then overwrite the fresh initialization, so the loaded policy is
    independent of the current RNG state.
    """
    sidecar = path + ".json"
    if not os.path.exists(sidecar):
        raise ValueError(f"checkpoint sidecar not found: {sidecar}")
    with open(sidecar, "r", encoding="utf-8") as handle:
        meta = json.load(handle)
    ckpt = nn.load_checkpoint(path)
    cfg = parse_config(meta["config"])
    learner = make_learner(cfg, meta["seed"])
    nn.restore_into(learner.store, ckpt)
    return cfg, meta["seed"], learner


# -------------------------------------------------------------------- locks

def acquire_lock(directory):
    """Claim exclusive ownership of a run directory; returns a release fn."""
    os.makedirs(directory, exist_ok=True)
    lock_path = os.path.join(directory, "lock")
    try:
        fd = os.open(lock_path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise RuntimeError(
            f"output directory {directory!r} is locked by another run "
            f"(remove {lock_path!r} if that run is dead)")
    os.write(fd, f"pid {os.getpid()}\n".encode())
    os.close(fd)

    def release():
        if os.path.exists(lock_path):
            os.remove(lock_path)

    return release


def _atomic_json(path, payload):
    tmp = path + ".tmp"
    with open(tmp, "w", encoding="utf-8") as handle:
        json.dump(payload, handle, indent=2)
        handle.write("\n")
    os.replace(tmp, path)


def _utcnow():
    return datetime.now(timezone.utc).isoformat()


def _fmt(value):
    if isinstance(value, float):
        return repr(value)
    return str(value)


# ----------------------------------------------------------- training loops

@dataclass
class SeedResult:
    seed: int
    run_dir: str
    metrics_path: str
    checkpoint_path: str
    env_steps: int
    updates: int
    final_eval_mean: float
    final_eval_std: float
    final_centralized_mean: float


def train_seed(cfg, seed, run_dir, log=None):
    """Run one seed to cfg.total_env_steps inside run_dir."""
    release = acquire_lock(run_dir)
    try:
        manifest_path = os.path.join(run_dir, "manifest.json")
        metrics_path = os.path.join(run_dir, "metrics.csv")
        manifest = {
            "config": serialize_config(cfg),
            "config_hash": config_hash(cfg),
            "version": __version__,
            "seed": int(seed),
            "started_at": _utcnow(),
            "metrics": os.path.basename(metrics_path),
        }
        _atomic_json(manifest_path, manifest)

        learner = make_learner(cfg, seed)
        workers = RolloutWorkers(cfg.make_env, cfg.ppo.rollout_threads, seed,
                                 window=cfg.window,
                                 include_last_action=cfg.include_last_action)
        sampler = learner.sampler()
        heads = decentralized_heads(learner)
        checkpoints = []
        env_steps, update = 0, 0
        status = "ok"
        start = time.perf_counter()
        try:
            with open(metrics_path, "w", newline="", encoding="utf-8") as out:
                writer = csv.writer(out)
                writer.writerow(METRIC_COLUMNS)
                out.flush()
                while env_steps < cfg.total_env_steps:
                    update += 1
                    if hasattr(learner, "set_progress"):
                        learner.set_progress(env_steps / cfg.total_env_steps)
                    batch = workers.collect(sampler, learner.value_fn(),
                                            cfg.ppo.episode_length)
                    stats = learner.update(batch)
                    env_steps += batch.n_transitions
                    last = env_steps >= cfg.total_env_steps
                    if update % cfg.eval_every == 0 or last:
                        ev = evaluate(
                            heads, cfg.make_env, cfg.eval_episodes, seed,
                            window=cfg.window,
                            include_last_action=cfg.include_last_action)
                        eval_mean, eval_std = ev.mean_return, ev.std_return
                    else:
                        eval_mean = eval_std = float("nan")
                    writer.writerow([_fmt(v) for v in (
                        update, env_steps, batch.mean_episode_return(),
                        eval_mean, eval_std, stats.policy_loss,
                        stats.value_loss, stats.entropy, stats.approx_kl,
                        stats.clip_frac, stats.igc_consistency_rate,
                        time.perf_counter() - start)])
                    out.flush()
                    if log is not None and (update % cfg.eval_every == 0 or last):
                        log(f"seed {seed} update {update} "
                            f"env_steps {env_steps} eval {eval_mean:.3f}")
                    if (cfg.checkpoint_every
                            and update % cfg.checkpoint_every == 0):
                        name = f"ckpt_{update:06d}.bin"
                        save_checkpoint(os.path.join(run_dir, name),
                                        learner, cfg, seed)
                        checkpoints.append(name)
        except Exception as exc:
            status = f"aborted: {exc}"
            manifest.update(finished_at=_utcnow(), status=status)
            _atomic_json(manifest_path, manifest)
            raise

        final_name = "final.bin"
        save_checkpoint(os.path.join(run_dir, final_name), learner, cfg, seed)
        checkpoints.append(final_name)

        final_eval = evaluate(heads, cfg.make_env, cfg.eval_episodes, seed,
                              window=cfg.window,
                              include_last_action=cfg.include_last_action)
        central = evaluate_centralized(
            learner.centralized_actor_fn(), cfg.make_env, cfg.eval_episodes,
            seed, window=cfg.window,
            include_last_action=cfg.include_last_action)
        manifest.update(
            finished_at=_utcnow(), status=status, env_steps=env_steps,
            updates=update, checkpoints=checkpoints,
            final_eval={"mean": final_eval.mean_return,
                        "std": final_eval.std_return,
                        "episodes": cfg.eval_episodes},
            final_centralized_eval={"mean": central.mean_return,
                                    "std": central.std_return,
                                    "episodes": cfg.eval_episodes})
        _atomic_json(manifest_path, manifest)
        return SeedResult(
            seed=int(seed), run_dir=run_dir, metrics_path=metrics_path,
            checkpoint_path=os.path.join(run_dir, final_name),
            env_steps=env_steps, updates=update,
            final_eval_mean=final_eval.mean_return,
            final_eval_std=final_eval.std_return,
            final_centralized_mean=central.mean_return)
    finally:
        release()


def train_run(cfg, base_dir=None, log=None):
    """Run every configured seed and write the combined summary."""
    base = base_dir if base_dir is not None else output_root(cfg)
    os.makedirs(base, exist_ok=True)
    results = [train_seed(cfg, seed, os.path.join(base, f"seed{seed}"), log)
               for seed in cfg.seeds]
    means = np.array([r.final_eval_mean for r in results])
    central = np.array([r.final_centralized_mean for r in results])
    summary = {
        "config_hash": config_hash(cfg),
        "env": cfg.env_name,
        "algorithm": cfg.algorithm,
        "seeds": [r.seed for r in results],
        "final_eval": {"mean": float(means.mean()),
                       "std": float(means.std()),
                       "per_seed": means.tolist()},
        "final_centralized_eval": {"mean": float(central.mean()),
                                   "std": float(central.std()),
                                   "per_seed": central.tolist()},
        "runs": [{"seed": r.seed, "metrics": r.metrics_path,
                  "checkpoint": r.checkpoint_path} for r in results],
    }
    _atomic_json(os.path.join(base, "summary.json"), summary)
    return results, summary
