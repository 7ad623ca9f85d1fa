"""End-to-end training: episode collection, periodic contrastive and PPO
updates, EMA targets, metrics logging, and run checkpointing.

Per episode: reset, draw one modeled policy uniformly, append the reset
observation to the episode trajectory; per step: embed the trajectory so far
with the target encoder, act, step, append the next observation unless the
episode just ended; per episode end: store the trajectory in the replay
buffer.  Every freq_ppo episodes the PPO nets update and their EMA targets
blend; every freq_clam episodes, once the buffer is full, the encoder updates
and its EMA target blends.

All randomness is counter-based: stream(seed, name, counter) with per-episode
counters for env/policy/action/modeled and per-update counters for
augment/ppo, so a resumed run consumes the same streams as an uninterrupted
one and the checkpoint only needs the counters.
"""

from __future__ import annotations

import csv
import os
import time
from dataclasses import dataclass

import numpy as np

from . import checkpoint as ckpt
from . import contrastive as ctr
from . import model as mdl
from . import ndiff as nd
from . import ppo as ppo_mod
from . import rng as rng_mod
from .config import TrainConfig, build_config
from .envs import make_env, make_policy_set

METRICS_FILE = "metrics.csv"
CHECKPOINT_DIR = "checkpoint"
METRICS_COLUMNS = ("episode", "ego_return", "team_return", "clam_loss",
                   "policy_loss", "value_loss", "entropy", "buffer_fill")


@dataclass
class RunState:
    """Everything needed to continue or evaluate a run."""

    config: TrainConfig
    model_config: object          # None for the nam variant
    encoder: object
    target: object
    actor: object
    critic: object
    actor_target: object
    critic_target: object
    clam_adam: object
    actor_adam: object
    critic_adam: object
    buffer: object
    episode: int = 0
    ppo_updates: int = 0
    clam_updates: int = 0
    wall_time_s: float = 0.0


@dataclass
class RunResult:
    out_dir: str
    checkpoint_dir: str
    metrics_path: str
    episodes: int
    ppo_updates: int
    clam_updates: int
    wall_time_s: float
    last_interval: dict


def init_run_state(config):
    env = make_env(config.env)
    obs_dim = env.spec.obs_dims[env.ego_agent]
    n_actions = env.spec.action_counts[env.ego_agent]
    seed = config.seed
    if config.variant == "nam":
        model_config = encoder = target = clam_adam = buffer = None
    else:
        model_config = config.model_config(obs_dim)
        encoder = mdl.init_params(model_config, rng_mod.stream(seed, "init", 0))
        target = mdl.make_target(encoder)
        clam_adam = nd.AdamState.init(encoder, lr=config.effective_contrastive().lr)
        buffer = ctr.ReplayBuffer(config.buffer_capacity,
                                  min_len=config.effective_contrastive().crop_len_min)
    actor = ppo_mod.init_actor(obs_dim, config.d, n_actions,
                               rng_mod.stream(seed, "init", 1),
                               width=config.ppo_width)
    critic = ppo_mod.init_critic(obs_dim, config.d,
                                 rng_mod.stream(seed, "init", 2),
                                 width=config.ppo_width)
    return RunState(
        config=config, model_config=model_config, encoder=encoder,
        target=target, actor=actor, critic=critic,
        actor_target=mdl.make_target(actor),
        critic_target=mdl.make_target(critic),
        clam_adam=clam_adam,
        actor_adam=nd.AdamState.init(actor, lr=config.ppo.lr),
        critic_adam=nd.AdamState.init(critic, lr=config.ppo.lr),
        buffer=buffer)


# ----------------------------------------------------------- checkpoint i/o

def _pack_store(arrays, prefix, store):
    for name, t in store.items():
        arrays[f"{prefix}.{name}"] = t.data.astype(np.float32)


def _pack_adam(arrays, manifest_adam, key, state):
    manifest_adam[key] = {"lr": state.lr, "beta1": state.beta1,
                          "beta2": state.beta2, "epsilon": state.epsilon,
                          "step_count": state.step_count}
    for name, arr in state.m.items():
        arrays[f"adam.{key}.m.{name}"] = arr.astype(np.float32)
    for name, arr in state.v.items():
        arrays[f"adam.{key}.v.{name}"] = arr.astype(np.float32)


def _group(arrays, prefix):
    cut = len(prefix) + 1
    return {name[cut:]: np.asarray(arr, dtype=np.float64)
            for name, arr in arrays.items() if name.startswith(prefix + ".")}


def _unpack_adam(arrays, meta, key, params):
    state = nd.AdamState(lr=meta["lr"], beta1=meta["beta1"],
                         beta2=meta["beta2"], epsilon=meta["epsilon"],
                         step_count=meta["step_count"])
    m = _group(arrays, f"adam.{key}.m")
    v = _group(arrays, f"adam.{key}.v")
    if set(m) != set(params.names()) or set(v) != set(params.names()):
        raise ckpt.CheckpointError(f"optimizer state for {key!r} does not "
                                   "match parameter names")
    state.m, state.v = m, v
    return state


def save_run(state, path, metrics_summary=None):
    config = state.config
    arrays = {}
    manifest_adam = {}
    _pack_store(arrays, "actor.online", state.actor)
    _pack_store(arrays, "actor.target", state.actor_target)
    _pack_store(arrays, "critic.online", state.critic)
    _pack_store(arrays, "critic.target", state.critic_target)
    _pack_adam(arrays, manifest_adam, "actor", state.actor_adam)
    _pack_adam(arrays, manifest_adam, "critic", state.critic_adam)
    buffer_labels = []
    if config.variant != "nam":
        _pack_store(arrays, "model.online", state.encoder)
        _pack_store(arrays, "model.target", state.target)
        _pack_adam(arrays, manifest_adam, "model", state.clam_adam)
        for i in range(len(state.buffer)):
            traj, label = state.buffer.episode(i)
            arrays[f"buffer.{i:05d}"] = traj.astype(np.float32)
            buffer_labels.append(int(label))
    manifest = {
        "kind": "clamrl-run",
        "config": config.resolved(),
        "env": config.env,
        "variant": config.variant,
        "episode": state.episode,
        "counters": {"ppo_updates": state.ppo_updates,
                     "clam_updates": state.clam_updates},
        "rng": {"scheme": "counter", "master_seed": config.seed},
        "adam": manifest_adam,
        "buffer_labels": buffer_labels,
        "metrics_summary": metrics_summary or {},
        "wall_time_s": state.wall_time_s,
    }
    return ckpt.save_checkpoint(manifest, arrays, path)


def load_run(path):
    """Rebuild a RunState from a checkpoint directory."""
    manifest, arrays = ckpt.load_checkpoint(path)
    if manifest.get("kind") != "clamrl-run":
        raise ckpt.CheckpointError(f"{path!r} is not a training checkpoint")
    cfg_dict = dict(manifest["config"])
    cfg_dict.pop("pooling", None)
    overrides = {"env": cfg_dict.pop("env"), "variant": cfg_dict.pop("variant"),
                 "seed": cfg_dict.pop("seed"), "out": cfg_dict.pop("out_dir"),
                 "episodes": cfg_dict.pop("episodes"),
                 "log_every": cfg_dict.pop("log_every"),
                 "policy_subset": cfg_dict.pop("policy_subset")}
    contrastive = cfg_dict.pop("contrastive")
    ppo_kwargs = cfg_dict.pop("ppo")
    file_values = {"model": {k: cfg_dict[k] for k in
                             ("d", "heads", "layers", "d_proj", "max_len",
                              "init_std", "ppo_width")},
                   "train": {k: cfg_dict[k] for k in
                             ("freq_clam", "tau_ema", "buffer_capacity")},
                   "contrastive": contrastive, "ppo": ppo_kwargs}
    config = build_config(file_values, overrides)

    state = init_run_state(config)
    state.actor.load_arrays(_group(arrays, "actor.online"))
    state.actor_target.load_arrays(_group(arrays, "actor.target"))
    state.critic.load_arrays(_group(arrays, "critic.online"))
    state.critic_target.load_arrays(_group(arrays, "critic.target"))
    state.actor_adam = _unpack_adam(arrays, manifest["adam"]["actor"],
                                    "actor", state.actor)
    state.critic_adam = _unpack_adam(arrays, manifest["adam"]["critic"],
                                     "critic", state.critic)
    if config.variant != "nam":
        state.encoder.load_arrays(_group(arrays, "model.online"))
        state.target.load_arrays(_group(arrays, "model.target"))
        state.clam_adam = _unpack_adam(arrays, manifest["adam"]["model"],
                                       "model", state.encoder)
        labels = manifest["buffer_labels"]
        trajs = _group(arrays, "buffer")
        if len(trajs) != len(labels):
            raise ckpt.CheckpointError("buffer arrays and labels disagree")
        for i, label in enumerate(labels):
            state.buffer.store(trajs[f"{i:05d}"], label)
    state.episode = int(manifest["episode"])
    state.ppo_updates = int(manifest["counters"]["ppo_updates"])
    state.clam_updates = int(manifest["counters"]["clam_updates"])
    state.wall_time_s = float(manifest["wall_time_s"])
    return state, manifest


# -------------------------------------------------------------- the loop

def _run_identity(config):
    """Config fields that must match for a resume; run length and output
    location may differ."""
    resolved = config.resolved()
    for key in ("episodes", "out_dir", "log_every"):
        resolved.pop(key)
    return resolved


def _fmt(value):
    return "" if value is None else repr(float(value))


def run_episode_for_training(env, policy_set, policy_index, state, config,
                             env_rng, action_rng, modeled_rng, rollout):
    """Collect one episode into `rollout`; returns (trajectory, returns)."""
    zero_embed = np.zeros(config.d)
    env_state, obs = env.reset(env_rng)
    traj = [obs[env.ego_agent]]
    policy = policy_set.policies[policy_index]
    ego_ret = team_ret = 0.0
    done = False
    while not done:
        o_e = obs[env.ego_agent]
        if config.variant == "nam":
            c = zero_embed
        else:
            c = mdl.embed_trajectory(state.target, state.model_config,
                                     np.asarray(traj))
        a_e, log_prob = ppo_mod.act(state.actor, o_e, c, action_rng)
        value = ppo_mod.value_of(state.critic, o_e, c)
        a_m = policy.act(env.modeled_obs(obs), modeled_rng)
        env_state, obs, rewards, done = env.step(
            env_state, env.joint_actions(a_e, a_m))
        r_ego = float(rewards[env.ego_agent])
        rollout.add(o_e, c, a_e, log_prob, r_ego, value, done)
        ego_ret += r_ego
        team_ret += float(np.sum(rewards))
        if not done:
            traj.append(obs[env.ego_agent])
    return np.asarray(traj), ego_ret, team_ret


def train_run(config, resume_from=None):
    """Run Algorithm-1 style training; writes metrics.csv and a checkpoint."""
    if resume_from is None:
        state = init_run_state(config)
    else:
        state, _ = load_run(resume_from)
        if _run_identity(state.config) != _run_identity(config):
            raise ValueError("resume config differs from checkpoint config")
        state.config = config
    env = make_env(config.env)
    policy_set = make_policy_set(config.env)
    if config.policy_subset is not None:
        policy_set = policy_set.subset(config.policy_subset)
    contrastive_cfg = config.effective_contrastive()
    seed = config.seed

    os.makedirs(config.out_dir, exist_ok=True)
    metrics_path = os.path.join(config.out_dir, METRICS_FILE)
    fresh_metrics = state.episode == 0 or not os.path.exists(metrics_path)
    metrics_fh = open(metrics_path, "w" if fresh_metrics else "a", newline="")
    writer = csv.writer(metrics_fh, lineterminator="\n")
    if fresh_metrics:
        writer.writerow(METRICS_COLUMNS)

    rollout = ppo_mod.RolloutBuffer()
    interval_ego, interval_team = [], []
    last_clam_loss = last_policy_loss = last_value_loss = last_entropy = None
    last_interval = {}
    t_start = time.monotonic()

    try:
        for episode in range(state.episode + 1, config.episodes + 1):
            policy_rng = rng_mod.stream(seed, "policy", episode)
            policy_index = int(policy_rng.integers(len(policy_set.policies)))
            traj, ego_ret, team_ret = run_episode_for_training(
                env, policy_set, policy_index, state, config,
                rng_mod.stream(seed, "env", episode),
                rng_mod.stream(seed, "action", episode),
                rng_mod.stream(seed, "modeled", episode),
                rollout)
            if config.variant != "nam":
                state.buffer.store(traj, policy_index)
            interval_ego.append(ego_ret)
            interval_team.append(team_ret)
            state.episode = episode

            if episode % config.ppo.freq_ppo == 0 and len(rollout):
                rollout.compute_gae(config.ppo.gamma, config.ppo.gae_lambda)
                stats = ppo_mod.ppo_update(
                    rollout, state.actor, state.critic, state.actor_adam,
                    state.critic_adam, config.ppo,
                    rng_mod.stream(seed, "ppo", state.ppo_updates))
                mdl.ema_update(state.actor, state.actor_target, config.tau_ema)
                mdl.ema_update(state.critic, state.critic_target, config.tau_ema)
                state.ppo_updates += 1
                rollout = ppo_mod.RolloutBuffer()
                last_policy_loss, last_value_loss, last_entropy = stats

            if config.variant != "nam" and episode % config.freq_clam == 0:
                loss = ctr.clam_update(
                    state.buffer, state.encoder, state.clam_adam,
                    state.model_config, contrastive_cfg,
                    rng_mod.stream(seed, "augment", state.clam_updates))
                if loss is not None:
                    mdl.ema_update(state.encoder, state.target, config.tau_ema)
                    state.clam_updates += 1
                    last_clam_loss = loss

            if episode % config.log_every == 0:
                last_interval = {
                    "episode": episode,
                    "ego_return": float(np.mean(interval_ego)),
                    "team_return": float(np.mean(interval_team)),
                    "clam_loss": last_clam_loss,
                    "policy_loss": last_policy_loss,
                    "value_loss": last_value_loss,
                    "entropy": last_entropy,
                    "buffer_fill": len(state.buffer) if state.buffer else 0,
                }
                writer.writerow([
                    episode, _fmt(last_interval["ego_return"]),
                    _fmt(last_interval["team_return"]),
                    _fmt(last_clam_loss), _fmt(last_policy_loss),
                    _fmt(last_value_loss), _fmt(last_entropy),
                    last_interval["buffer_fill"],
                ])
                metrics_fh.flush()
                interval_ego, interval_team = [], []
    finally:
        metrics_fh.close()

    state.wall_time_s += time.monotonic() - t_start
    checkpoint_dir = os.path.join(config.out_dir, CHECKPOINT_DIR)
    save_run(state, checkpoint_dir, metrics_summary=last_interval)
    return RunResult(out_dir=config.out_dir, checkpoint_dir=checkpoint_dir,
                     metrics_path=metrics_path, episodes=state.episode,
                     ppo_updates=state.ppo_updates,
                     clam_updates=state.clam_updates,
                     wall_time_s=state.wall_time_s,
                     last_interval=last_interval)
