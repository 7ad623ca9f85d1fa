"""Evaluation tools: clustering ratio, embedding dumps, probes, returns.

Step-index convention used throughout: "step s" means the embedding computed
after consuming s ego observations (the prefix o_0..o_{s-1}).  A full 50-step
episode stores 50 observations, so step 50 uses the whole trajectory
including the final stored observation.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.distance import pdist

from . import model as mdl
from . import ndiff as nd
from . import ppo as ppo_mod
from . import rng as rng_mod


# ------------------------------------------------------------------ IICR

def iicr(embeddings, labels):
    """Mean intra-label over mean inter-label pairwise Euclidean distance.

    Below 1 means points sharing a label sit closer together than points
    with different labels.  Invariant to rigid rotation and uniform scaling.
    """
    x = np.asarray(embeddings, dtype=np.float64)
    y = np.asarray(labels)
    if x.ndim != 2 or x.shape[0] != y.shape[0]:
        raise ValueError("embeddings must be (n, d) with one label per row")
    uniq, counts = np.unique(y, return_counts=True)
    if uniq.size < 2:
        raise ValueError("need at least two distinct labels")
    if counts.min() < 2:
        raise ValueError("every label needs at least two points")
    dists = pdist(x)
    same = (y[:, None] == y[None, :])[np.triu_indices(len(y), 1)]
    inter = dists[~same].mean()
    if inter == 0.0:
        raise ValueError("degenerate embedding set: all points identical")
    return float(dists[same].mean() / inter)


# ----------------------------------------------------- controllers/embedders

def ppo_controller(actor):
    def act(obs, embed, rng):
        return ppo_mod.act(actor, obs, embed, rng)[0]
    return act


def random_controller(n_actions):
    def act(obs, embed, rng):
        return int(rng.integers(n_actions))
    return act


def scripted_controller(policy):
    """Drive the ego agent with one of the fixed hand-coded policies."""
    def act(obs, embed, rng):
        return int(policy.act(obs, rng))
    return act


def target_embedder(params, config):
    def embed(traj):
        return mdl.embed_trajectory(params, config, np.asarray(traj))
    return embed


def zero_embedder(d):
    zero = np.zeros(d)
    def embed(traj):
        return zero
    return embed


# ------------------------------------------------------------------ rollouts

@dataclass
class EpisodeTrace:
    policy_index: int
    ego_return: float
    team_return: float
    steps: int
    embeddings: np.ndarray = field(default=None, repr=False)   # (T, d)
    ego_obs: np.ndarray = field(default=None, repr=False)      # (T, obs_dim)
    modeled_actions: np.ndarray = field(default=None, repr=False)  # (T,)


def run_episode(env, policy_set, policy_index, controller, embedder,
                env_rng, action_rng, modeled_rng, record=False):
    """One evaluation episode against a chosen fixed policy.

    The embedding at step t is computed from the ego observations seen so
    far (prefix of length t+1); the post-terminal observation is never
    appended, matching the training loop.
    """
    policy = policy_set.policies[policy_index]
    state, obs = env.reset(env_rng)
    traj = [obs[env.ego_agent]]
    embeds, egos, mod_actions = [], [], []
    ego_ret = team_ret = 0.0
    done = False
    while not done:
        o_e = obs[env.ego_agent]
        c = embedder(traj)
        a_e = controller(o_e, c, action_rng)
        a_m = policy.act(env.modeled_obs(obs), modeled_rng)
        if record:
            embeds.append(np.array(c, dtype=np.float64, copy=True))
            egos.append(np.array(o_e, dtype=np.float64, copy=True))
            mod_actions.append(env.modeled_action_label(a_m))
        state, obs, rewards, done = env.step(state, env.joint_actions(a_e, a_m))
        ego_ret += float(rewards[env.ego_agent])
        team_ret += float(np.sum(rewards))
        if not done:
            traj.append(obs[env.ego_agent])
    return EpisodeTrace(
        policy_index=policy_index,
        ego_return=ego_ret,
        team_return=team_ret,
        steps=len(traj),
        embeddings=np.asarray(embeds) if record else None,
        ego_obs=np.asarray(egos) if record else None,
        modeled_actions=np.asarray(mod_actions) if record else None,
    )


def _episode_rngs(seed, counter):
    return (rng_mod.stream(seed, "env", counter),
            rng_mod.stream(seed, "action", counter),
            rng_mod.stream(seed, "modeled", counter))


# ------------------------------------------------------------------- returns

@dataclass
class ReturnReport:
    metric: str                 # team_return for lbf, ego_return for pp
    mean: float
    ci95: float
    per_seed_means: np.ndarray
    values: np.ndarray          # (seeds, episodes) episodic values
    episodes: int
    seeds: tuple


def evaluate_returns(env, policy_set, controller, embedder, episodes, seeds):
    """Mean episodic return with a normal-approximation 95% interval.

    The modeled policy is drawn uniformly per episode.  With several seeds
    the interval is taken across seed means; with one seed, across episodes.
    """
    if episodes < 1:
        raise ValueError("need at least one episode")
    seeds = tuple(int(s) for s in seeds)
    metric = "team_return" if env.spec.name == "lbf" else "ego_return"
    values = np.zeros((len(seeds), episodes))
    for si, seed in enumerate(seeds):
        for e in range(episodes):
            env_rng, action_rng, modeled_rng = _episode_rngs(seed, e)
            pol_rng = rng_mod.stream(seed, "policy", e)
            idx = int(pol_rng.integers(len(policy_set.policies)))
            tr = run_episode(env, policy_set, idx, controller, embedder,
                             env_rng, action_rng, modeled_rng)
            values[si, e] = tr.team_return if metric == "team_return" else tr.ego_return
    per_seed = values.mean(axis=1)
    if len(seeds) > 1:
        ci = 1.96 * per_seed.std(ddof=1) / np.sqrt(len(seeds))
    elif episodes > 1:
        ci = 1.96 * values[0].std(ddof=1) / np.sqrt(episodes)
    else:
        ci = float("nan")
    return ReturnReport(metric=metric, mean=float(per_seed.mean()),
                        ci95=float(ci), per_seed_means=per_seed,
                        values=values, episodes=episodes, seeds=seeds)


# ------------------------------------------------------------ embedding dump

def collect_traces(env, policy_set, controller, embedder, episodes, seed):
    """`episodes` recorded rollouts against every policy in the set."""
    traces = []
    counter = 0
    for policy_index in range(len(policy_set.policies)):
        for _ in range(episodes):
            env_rng, action_rng, modeled_rng = _episode_rngs(seed, counter)
            traces.append(run_episode(env, policy_set, policy_index,
                                      controller, embedder,
                                      env_rng, action_rng, modeled_rng,
                                      record=True))
            counter += 1
    return traces


def export_embeddings(path, env, policy_set, controller, embedder,
                      episodes, steps, seed):
    """Write JSON-lines records {episode, step, policy, embedding}.

    Each requested step s records the embedding computed from the first s
    observations; episodes shorter than s contribute no record for it.
    Returns the number of records written.
    """
    steps = sorted(int(s) for s in steps)
    if any(s < 1 for s in steps):
        raise ValueError("steps are 1-based prefix lengths")
    traces = collect_traces(env, policy_set, controller, embedder, episodes, seed)
    count = 0
    with open(path, "w") as fh:
        for episode_id, tr in enumerate(traces):
            for s in steps:
                if s <= tr.steps:
                    rec = {"episode": episode_id, "step": s,
                           "policy": tr.policy_index,
                           "embedding": tr.embeddings[s - 1].tolist()}
                    fh.write(json.dumps(rec) + "\n")
                    count += 1
    return count


def iicr_by_step(env, policy_set, controller, embedder, episodes, steps, seed):
    """Clustering ratio of embeddings grouped by policy, per prefix length."""
    traces = collect_traces(env, policy_set, controller, embedder, episodes, seed)
    out = {}
    for s in sorted(int(v) for v in steps):
        points = [tr.embeddings[s - 1] for tr in traces if s <= tr.steps]
        labels = [tr.policy_index for tr in traces if s <= tr.steps]
        out[s] = iicr(np.asarray(points), np.asarray(labels))
    return out


# -------------------------------------------------------------------- probes

@dataclass
class ProbeDataset:
    """Per-step supervised samples gathered from recorded rollouts."""

    embeddings: np.ndarray     # (n, d)
    observations: np.ndarray   # (n, obs_dim)
    targets: np.ndarray        # (n,) int class ids
    steps: np.ndarray          # (n,) prefix length of the embedding
    episode_ids: np.ndarray    # (n,)

    def __len__(self):
        return len(self.targets)


def collect_probe_data(env, policy_set, controller, embedder, episodes, seed,
                       target_kind):
    """target_kind "action": modeled-agent action; "policy": policy index.

    Policies rotate round-robin over episodes so classes stay balanced.
    """
    if target_kind not in ("action", "policy"):
        raise ValueError(f"unknown probe target kind {target_kind!r}")
    embeds, obs_rows, targets, steps, episode_ids = [], [], [], [], []
    n_policies = len(policy_set.policies)
    for episode in range(episodes):
        policy_index = episode % n_policies
        env_rng, action_rng, modeled_rng = _episode_rngs(seed, episode)
        tr = run_episode(env, policy_set, policy_index, controller, embedder,
                         env_rng, action_rng, modeled_rng, record=True)
        for t in range(tr.steps):
            embeds.append(tr.embeddings[t])
            obs_rows.append(tr.ego_obs[t])
            targets.append(tr.modeled_actions[t] if target_kind == "action"
                           else policy_index)
            steps.append(t + 1)          # prefix length feeding the embedding
            episode_ids.append(episode)
    return ProbeDataset(np.asarray(embeds), np.asarray(obs_rows),
                        np.asarray(targets, dtype=np.int64),
                        np.asarray(steps, dtype=np.int64),
                        np.asarray(episode_ids, dtype=np.int64))


def split_by_episode(dataset, test_fraction, rng):
    """Disjoint train/test row indices; whole episodes go to one side.

    Episodes are stratified by their first-row target so that a thin test
    split still covers every class when episode labels are class-constant
    (always true for policy targets).  Within a stratum the order is random;
    across strata episodes are drafted proportionally.
    """
    ids, first_rows = np.unique(dataset.episode_ids, return_index=True)
    if len(ids) < 2:
        raise ValueError("need at least two episodes to split")
    n_test = max(1, int(round(test_fraction * len(ids))))
    strata = {}
    for eid, row in zip(ids.tolist(), first_rows.tolist()):
        strata.setdefault(int(dataset.targets[row]), []).append(eid)
    ranked = []                   # (draft rank, episode id)
    for label in sorted(strata):
        group = strata[label]
        order = rng.permutation(len(group))
        for pos, g in enumerate(order):
            ranked.append(((pos + 0.5) / len(group), label, group[g]))
    ranked.sort()
    test_ids = {eid for _, _, eid in ranked[:n_test]}
    test_mask = np.isin(dataset.episode_ids, list(test_ids))
    return np.flatnonzero(~test_mask), np.flatnonzero(test_mask)


@dataclass(frozen=True)
class ProbeConfig:
    width: int = 64
    lr: float = 1e-3
    epochs: int = 20
    minibatch: int = 256
    test_fraction: float = 0.2


PROBE_INPUT_KINDS = ("embed+obs", "embed", "obs")


def probe_inputs(dataset, input_kind):
    if input_kind == "embed+obs":
        return np.concatenate([dataset.embeddings, dataset.observations], axis=1)
    if input_kind == "embed":
        return dataset.embeddings
    if input_kind == "obs":
        return dataset.observations
    raise ValueError(f"unknown probe input kind {input_kind!r}")


def _probe_logits(params, x):
    h = nd.tanh(nd.add(nd.matmul(x, params["probe.W1"]), params["probe.b1"]))
    return nd.add(nd.matmul(h, params["probe.W2"]), params["probe.b2"])


def train_probe(x, y, n_classes, rng, config=ProbeConfig()):
    """Cross-entropy classifier: one tanh hidden layer of `width` units."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if np.unique(y).size < 2:
        raise ValueError("probe targets contain a single class")
    if y.min() < 0 or y.max() >= n_classes:
        raise ValueError("probe target out of range")
    params = nd.ParamStore()
    params.add("probe.W1", rng.normal(0.0, 0.02, size=(x.shape[1], config.width)))
    params.add("probe.b1", np.zeros((1, config.width)))
    params.add("probe.W2", rng.normal(0.0, 0.02, size=(config.width, n_classes)))
    params.add("probe.b2", np.zeros((1, n_classes)))
    state = nd.AdamState.init(params, lr=config.lr)
    for _ in range(config.epochs):
        perm = rng.permutation(len(y))
        for lo in range(0, len(perm), config.minibatch):
            mb = perm[lo:lo + config.minibatch]
            probs = nd.row_softmax(_probe_logits(params, nd.constant(x[mb])))
            loss = nd.scale(nd.mean_all(nd.log(nd.gather_rows(probs, y[mb]))), -1.0)
            params.zero_grad()
            nd.backward(loss)
            nd.adam_step(params, state)
    return params


def probe_predict(params, x):
    with nd.no_grad():
        logits = _probe_logits(params, nd.constant(np.asarray(x, dtype=np.float64)))
    return np.argmax(logits.data, axis=1)


def probe_accuracy(params, x, y):
    """(accuracy, sample count); refuses empty inputs."""
    y = np.asarray(y)
    if len(y) == 0:
        raise ValueError("no samples to score")
    return float(np.mean(probe_predict(params, x) == y)), int(len(y))


def probe_accuracy_by_step(params, x, y, steps):
    """Accuracy per prefix length, with per-step sample counts."""
    y = np.asarray(y)
    steps = np.asarray(steps)
    pred = probe_predict(params, x)
    out = []
    for s in np.unique(steps):
        mask = steps == s
        out.append((int(s), float(np.mean(pred[mask] == y[mask])),
                    int(mask.sum())))
    return out


@dataclass
class ProbeResult:
    input_kind: str
    n_classes: int
    accuracy: float
    test_count: int
    by_step: list
    params: nd.ParamStore = field(repr=False, default=None)


def probe_experiment(dataset, input_kind, n_classes, rng, config=ProbeConfig()):
    """Split by episode, train on the large side, score the held-out side."""
    train_idx, test_idx = split_by_episode(dataset, config.test_fraction, rng)
    x = probe_inputs(dataset, input_kind)
    params = train_probe(x[train_idx], dataset.targets[train_idx],
                         n_classes, rng, config)
    acc, n = probe_accuracy(params, x[test_idx], dataset.targets[test_idx])
    by_step = probe_accuracy_by_step(params, x[test_idx],
                                     dataset.targets[test_idx],
                                     dataset.steps[test_idx])
    return ProbeResult(input_kind=input_kind, n_classes=n_classes,
                       accuracy=acc, test_count=n, by_step=by_step,
                       params=params)
