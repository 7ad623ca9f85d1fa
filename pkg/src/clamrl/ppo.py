"""PPO actor-critic conditioned on the ego observation and policy embedding.

The actor and critic are separate tanh MLPs over concat(o^e, c).  The
embedding c comes in as a plain array (produced by the frozen target encoder)
so no gradient can reach the representation model from here.  Advantages use
GAE; the policy loss is the clipped surrogate with an entropy bonus, the
value loss is mean squared error against the GAE returns.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import ndiff as nd


@dataclass(frozen=True)
class PPOConfig:
    clip_eps: float = 0.2
    entropy_coef: float = 0.01
    gamma: float = 0.99
    gae_lambda: float = 0.95
    epochs: int = 4
    minibatch_size: int = 256
    lr: float = 3e-4
    freq_ppo: int = 10         # episodes between updates
    normalize_adv: bool = True

    def __post_init__(self):
        if self.clip_eps <= 0:
            raise ValueError("clip_eps must be positive")
        if not 0.0 < self.gamma < 1.0:
            raise ValueError("gamma must lie in (0, 1)")
        if not 0.0 <= self.gae_lambda <= 1.0:
            raise ValueError("gae_lambda must lie in [0, 1]")


def _init_mlp(prefix, in_dim, out_dim, rng, width=128, std=0.02):
    p = nd.ParamStore()
    p.add(prefix + ".W1", rng.normal(0.0, std, size=(in_dim, width)))
    p.add(prefix + ".b1", np.zeros((1, width)))
    p.add(prefix + ".W2", rng.normal(0.0, std, size=(width, width)))
    p.add(prefix + ".b2", np.zeros((1, width)))
    p.add(prefix + ".W3", rng.normal(0.0, std, size=(width, out_dim)))
    p.add(prefix + ".b3", np.zeros((1, out_dim)))
    return p


def init_actor(obs_dim, embed_dim, action_count, rng, width=128):
    return _init_mlp("actor", obs_dim + embed_dim, action_count, rng, width)


def init_critic(obs_dim, embed_dim, rng, width=128):
    return _init_mlp("critic", obs_dim + embed_dim, 1, rng, width)


def _mlp_forward(params, prefix, x):
    h = nd.tanh(nd.add(nd.matmul(x, params[prefix + ".W1"]), params[prefix + ".b1"]))
    h = nd.tanh(nd.add(nd.matmul(h, params[prefix + ".W2"]), params[prefix + ".b2"]))
    return nd.add(nd.matmul(h, params[prefix + ".W3"]), params[prefix + ".b3"])


def actor_logits(params, x):
    return _mlp_forward(params, "actor", x)


def critic_value(params, x):
    return _mlp_forward(params, "critic", x)


def act(actor, obs, embed, rng):
    """Sample an action from softmax(logits); returns (action, log_prob)."""
    x = np.concatenate([np.asarray(obs, float), np.asarray(embed, float)])[None, :]
    with nd.no_grad():
        logits = actor_logits(actor, nd.constant(x)).data[0]
    if not np.all(np.isfinite(logits)):
        raise FloatingPointError("actor produced non-finite logits")
    z = logits - logits.max()
    probs = np.exp(z)
    probs /= probs.sum()
    action = int(rng.choice(len(probs), p=probs))
    return action, float(np.log(probs[action]))


def value_of(critic, obs, embed):
    x = np.concatenate([np.asarray(obs, float), np.asarray(embed, float)])[None, :]
    with nd.no_grad():
        v = critic_value(critic, nd.constant(x))
    return float(v.data[0, 0])


class RolloutBuffer:
    """Flat per-step storage across whole episodes between updates.

    Embeddings are plain arrays: the encoder is outside the PPO gradient
    path by construction.
    """

    def __init__(self):
        self.obs, self.embeds, self.actions = [], [], []
        self.log_probs, self.rewards, self.values, self.dones = [], [], [], []
        self.advantages = None
        self.returns = None

    def __len__(self):
        return len(self.rewards)

    def add(self, obs, embed, action, log_prob, reward, value, done):
        self.obs.append(np.asarray(obs, dtype=np.float64))
        self.embeds.append(np.asarray(embed, dtype=np.float64))
        self.actions.append(int(action))
        self.log_probs.append(float(log_prob))
        self.rewards.append(float(reward))
        self.values.append(float(value))
        self.dones.append(bool(done))

    def compute_gae(self, gamma, lam, bootstrap_value=0.0):
        r = np.asarray(self.rewards)
        v = np.asarray(self.values)
        nonterm = 1.0 - np.asarray(self.dones, dtype=float)
        adv = np.zeros(len(r))
        carry = 0.0
        for t in reversed(range(len(r))):
            next_v = v[t + 1] if t + 1 < len(r) else float(bootstrap_value)
            delta = r[t] + gamma * next_v * nonterm[t] - v[t]
            carry = delta + gamma * lam * nonterm[t] * carry
            adv[t] = carry
        self.advantages = adv
        self.returns = adv + v
        return adv, self.returns

    def inputs(self):
        return np.concatenate([np.stack(self.obs), np.stack(self.embeds)], axis=1)


def normalize_advantages(adv):
    """Mean 0, std 1 over the update batch (std floored at 1e-8)."""
    adv = np.asarray(adv, dtype=np.float64)
    return (adv - adv.mean()) / (adv.std() + 1e-8)


def _categorical_terms(actor, x, actions):
    """(log_probs of taken actions (n,1), probs (n,k), entropy scalar)."""
    probs = nd.row_softmax(actor_logits(actor, x))
    taken = nd.log(nd.gather_rows(probs, actions))
    plogp = nd.mul(probs, nd.log(probs))
    entropy = nd.scale(nd.sum_all(plogp), -1.0 / probs.shape[0])
    return taken, entropy


def policy_loss_terms(actor, x, actions, old_log_probs, advantages, config):
    """Clipped surrogate (as a loss) plus entropy, built on the graph."""
    taken, entropy = _categorical_terms(actor, x, actions)
    ratio = nd.exp(nd.sub(taken, nd.constant(old_log_probs[:, None])))
    adv = nd.constant(advantages[:, None])
    surr = nd.minimum(nd.mul(ratio, adv),
                      nd.mul(nd.clip(ratio, 1.0 - config.clip_eps,
                                     1.0 + config.clip_eps), adv))
    surrogate = nd.scale(nd.mean_all(surr), -1.0)
    total = nd.sub(surrogate, nd.scale(entropy, config.entropy_coef))
    return total, surrogate, entropy


def value_loss_term(critic, x, returns):
    diff = nd.sub(critic_value(critic, x), nd.constant(returns[:, None]))
    return nd.mean_all(nd.mul(diff, diff))


def ppo_update(rollout, actor, critic, actor_state, critic_state, config, rng):
    """Epochs of shuffled minibatch updates; returns mean loss diagnostics."""
    if len(rollout) == 0:
        raise ValueError("cannot update from an empty rollout")
    if rollout.advantages is None:
        raise ValueError("advantages not computed; call compute_gae first")

    x_all = rollout.inputs()
    actions = np.asarray(rollout.actions)
    old_logp = np.asarray(rollout.log_probs)
    adv = rollout.advantages
    if config.normalize_adv:
        adv = normalize_advantages(adv)
    rets = rollout.returns

    pol_losses, val_losses, entropies = [], [], []
    for _ in range(config.epochs):
        perm = rng.permutation(len(rollout))
        for lo in range(0, len(perm), config.minibatch_size):
            mb = perm[lo:lo + config.minibatch_size]
            x = nd.constant(x_all[mb])

            total, surrogate, entropy = policy_loss_terms(
                actor, x, actions[mb], old_logp[mb], adv[mb], config)
            actor.zero_grad()
            nd.backward(total)
            nd.adam_step(actor, actor_state)

            vloss = value_loss_term(critic, x, rets[mb])
            critic.zero_grad()
            nd.backward(vloss)
            nd.adam_step(critic, critic_state)

            pol_losses.append(surrogate.item())
            val_losses.append(vloss.item())
            entropies.append(entropy.item())

    return (float(np.mean(pol_losses)), float(np.mean(val_losses)),
            float(np.mean(entropies)))
