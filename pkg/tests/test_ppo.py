"""PPO tests: sampling, GAE against brute force, clipping, gradients."""

import numpy as np
import pytest

import clamrl.ndiff as nd
from clamrl import ppo


def _merged(*stores):
    m = nd.ParamStore()
    for s in stores:
        for name, t in s.items():
            m.add(name, t.data.copy())
    return m


def _zero_actor(in_dim, n_actions, b3):
    p = nd.ParamStore()
    p.add("actor.W1", np.zeros((in_dim, 8)))
    p.add("actor.b1", np.zeros((1, 8)))
    p.add("actor.W2", np.zeros((8, 8)))
    p.add("actor.b2", np.zeros((1, 8)))
    p.add("actor.W3", np.zeros((8, n_actions)))
    p.add("actor.b3", np.asarray(b3, dtype=float).reshape(1, n_actions))
    return p


# ---------------------------------------------------------------- sampling

def test_act_log_prob_matches_softmax():
    rng = np.random.default_rng(0)
    actor = ppo.init_actor(obs_dim=5, embed_dim=3, action_count=4, rng=rng, width=16)
    for trial in range(20):
        obs = rng.normal(size=5)
        emb = rng.normal(size=3)
        action, log_prob = ppo.act(actor, obs, emb, rng)
        x = np.concatenate([obs, emb])[None, :]
        with nd.no_grad():
            logits = ppo.actor_logits(actor, nd.constant(x)).data[0]
        z = logits - logits.max()
        probs = np.exp(z) / np.exp(z).sum()
        assert abs(np.exp(log_prob) - probs[action]) < 1e-9


def test_act_extreme_logits_picks_first_action():
    actor = _zero_actor(4, 3, [10.0, -10.0, -10.0])
    rng = np.random.default_rng(7)
    draws = [ppo.act(actor, np.zeros(2), np.zeros(2), rng)[0] for _ in range(10_000)]
    assert np.mean(np.asarray(draws) == 0) >= 0.999


def test_act_seeded_reproducible():
    actor = ppo.init_actor(3, 2, 5, np.random.default_rng(1), width=16)
    obs, emb = np.ones(3), np.full(2, 0.5)
    a = [ppo.act(actor, obs, emb, np.random.default_rng(42)) for _ in range(3)]
    assert a[0] == a[1] == a[2]


def test_act_rejects_non_finite_logits():
    actor = _zero_actor(4, 3, [np.nan, 0.0, 0.0])
    with pytest.raises(FloatingPointError):
        ppo.act(actor, np.zeros(2), np.zeros(2), np.random.default_rng(0))


# --------------------------------------------------------------------- GAE

def _filled_rollout(rewards, values, dones, obs_dim=2, embed_dim=2):
    roll = ppo.RolloutBuffer()
    for r, v, d in zip(rewards, values, dones):
        roll.add(np.zeros(obs_dim), np.zeros(embed_dim), 0, 0.0, r, v, d)
    return roll


def _brute_gae(rewards, values, dones, gamma, lam, bootstrap=0.0):
    T = len(rewards)
    delta = [rewards[t]
             + gamma * (values[t + 1] if t + 1 < T else bootstrap) * (1 - dones[t])
             - values[t]
             for t in range(T)]
    adv = []
    for t in range(T):
        acc, f = 0.0, 1.0
        for k in range(t, T):
            acc += f * delta[k]
            if dones[k]:
                break
            f *= gamma * lam
        adv.append(acc)
    return np.asarray(adv)


def test_gae_lambda_zero_is_one_step_td():
    rng = np.random.default_rng(3)
    r, v = rng.normal(size=6), rng.normal(size=6)
    d = [False] * 5 + [True]
    roll = _filled_rollout(r, v, d)
    adv, _ = roll.compute_gae(gamma=0.9, lam=0.0)
    delta = [r[t] + 0.9 * (v[t + 1] if t < 5 else 0.0) * (1 - d[t]) - v[t]
             for t in range(6)]
    assert np.allclose(adv, delta, atol=1e-12)


def test_gae_undiscounted_unit_rewards():
    roll = _filled_rollout([1.0, 1.0, 1.0], [0.0, 0.0, 0.0], [False, False, True])
    adv, ret = roll.compute_gae(gamma=1.0, lam=1.0)
    assert np.allclose(adv, [3.0, 2.0, 1.0], atol=1e-12)
    assert np.allclose(ret, [3.0, 2.0, 1.0], atol=1e-12)


def test_gae_matches_brute_force_sum():
    rng = np.random.default_rng(11)
    for dones in ([False] * 5, [False, True, False, False, False]):
        r = rng.normal(size=5)
        v = rng.normal(size=5)
        roll = _filled_rollout(r, v, dones)
        adv, ret = roll.compute_gae(gamma=0.99, lam=0.95, bootstrap_value=0.3)
        expect = _brute_gae(r, v, dones, 0.99, 0.95, bootstrap=0.3)
        assert np.max(np.abs(adv - expect)) < 1e-12
        assert np.max(np.abs(ret - (expect + v))) < 1e-12


def test_normalize_advantages():
    const = ppo.normalize_advantages(np.full(7, 3.5))
    assert np.allclose(const, 0.0)
    rng = np.random.default_rng(5)
    a = rng.normal(2.0, 4.0, size=100)
    z = ppo.normalize_advantages(a)
    assert abs(z.mean()) < 1e-9
    assert abs(z.std() - 1.0) < 1e-6
    assert np.argmax(z) == np.argmax(a)


# ----------------------------------------------------------- loss geometry

def _loss_setup(seed, n=6, obs_dim=3, embed_dim=2, n_actions=4, width=8):
    rng = np.random.default_rng(seed)
    actor = ppo.init_actor(obs_dim, embed_dim, n_actions, rng, width=width)
    x_np = rng.normal(size=(n, obs_dim + embed_dim))
    actions = rng.integers(0, n_actions, size=n)
    adv = rng.normal(size=n)
    with nd.no_grad():
        probs = nd.row_softmax(ppo.actor_logits(actor, nd.constant(x_np)))
        cur_logp = nd.log(nd.gather_rows(probs, actions)).data[:, 0]
    return actor, x_np, actions, adv, cur_logp


def test_unit_ratio_gradient_equals_vanilla_policy_gradient():
    actor, x_np, actions, adv, cur_logp = _loss_setup(21)
    cfg = ppo.PPOConfig(entropy_coef=0.0)

    total, _, _ = ppo.policy_loss_terms(
        actor, nd.constant(x_np), actions, cur_logp, adv, cfg)
    actor.zero_grad()
    nd.backward(total)
    clipped_grads = {k: t.grad.copy() for k, t in actor.items()}

    # plain REINFORCE objective on the same batch
    actor.zero_grad()
    probs = nd.row_softmax(ppo.actor_logits(actor, nd.constant(x_np)))
    logp = nd.log(nd.gather_rows(probs, actions))
    pg = nd.scale(nd.mean_all(nd.mul(logp, nd.constant(adv[:, None]))), -1.0)
    nd.backward(pg)

    for k, t in actor.items():
        assert np.max(np.abs(clipped_grads[k] - t.grad)) < 1e-10, k


def test_clip_saturation_kills_gradient():
    actor, x_np, actions, adv, cur_logp = _loss_setup(22, n=4)
    cfg = ppo.PPOConfig(clip_eps=0.2, entropy_coef=0.0)
    # old log-probs one nat below current: ratio = e > 1.2, advantages positive
    old = cur_logp - 1.0
    total, _, _ = ppo.policy_loss_terms(
        actor, nd.constant(x_np), actions, old, np.abs(adv) + 0.1, cfg)
    actor.zero_grad()
    nd.backward(total)
    for k, t in actor.items():
        assert np.all(t.grad == 0.0), k


def test_huge_clip_eps_equals_unclipped_surrogate():
    actor, x_np, actions, adv, cur_logp = _loss_setup(23)
    old = cur_logp - 0.3
    cfg = ppo.PPOConfig(clip_eps=1e9, entropy_coef=0.0)

    total, _, _ = ppo.policy_loss_terms(
        actor, nd.constant(x_np), actions, old, adv, cfg)
    actor.zero_grad()
    nd.backward(total)
    clipped = {k: t.grad.copy() for k, t in actor.items()}

    actor.zero_grad()
    probs = nd.row_softmax(ppo.actor_logits(actor, nd.constant(x_np)))
    logp = nd.log(nd.gather_rows(probs, actions))
    ratio = nd.exp(nd.sub(logp, nd.constant(old[:, None])))
    raw = nd.scale(nd.mean_all(nd.mul(ratio, nd.constant(adv[:, None]))), -1.0)
    nd.backward(raw)

    for k, t in actor.items():
        assert np.max(np.abs(clipped[k] - t.grad)) < 1e-12, k


def test_entropy_within_categorical_bounds():
    rng = np.random.default_rng(31)
    for n_actions in (2, 5, 11):
        actor = ppo.init_actor(4, 2, n_actions, rng, width=8)
        x = nd.constant(rng.normal(size=(9, 6)) * 3.0)
        _, entropy = ppo._categorical_terms(actor, x, rng.integers(0, n_actions, 9))
        assert -1e-12 <= entropy.item() <= np.log(n_actions) + 1e-12


def test_value_loss_zero_when_predictions_equal_returns():
    rng = np.random.default_rng(41)
    critic = ppo.init_critic(3, 2, rng, width=8)
    x_np = rng.normal(size=(5, 5))
    with nd.no_grad():
        v = ppo.critic_value(critic, nd.constant(x_np)).data[:, 0]
    loss = ppo.value_loss_term(critic, nd.constant(x_np), v.copy())
    assert loss.item() == 0.0


def test_combined_loss_gradcheck():
    rng = np.random.default_rng(51)
    actor = ppo.init_actor(3, 2, 4, rng, width=8)
    critic = ppo.init_critic(3, 2, rng, width=8)
    params = _merged(actor, critic)

    x_np = rng.normal(size=(6, 5))
    actions = rng.integers(0, 4, size=6)
    adv = rng.normal(size=6)
    rets = rng.normal(size=6)
    # old log-probs offset keeps every ratio strictly inside the clip band,
    # so the surrogate is smooth at the evaluation point
    with nd.no_grad():
        probs = nd.row_softmax(ppo.actor_logits(params, nd.constant(x_np)))
        old = nd.log(nd.gather_rows(probs, actions)).data[:, 0] - 0.05
    cfg = ppo.PPOConfig(clip_eps=0.2, entropy_coef=0.01)

    def loss_fn():
        total, _, _ = ppo.policy_loss_terms(
            params, nd.constant(x_np), actions, old, adv, cfg)
        return nd.add(total, ppo.value_loss_term(params, nd.constant(x_np), rets))

    report = nd.grad_check(loss_fn, params, h=1e-5, tol=1e-4,
                           max_coords_per_param=4,
                           rng=np.random.default_rng(0), denom_floor=1e-3)
    assert report.passed, report.summary()


# ------------------------------------------------------------------ update

def _synthetic_rollout(actor, critic, rng, steps=64, obs_dim=3, embed_dim=2):
    """Bandit-style rollout: acting 0 earns +1 advantage, anything else -1."""
    roll = ppo.RolloutBuffer()
    obs = np.ones(obs_dim)
    emb = np.zeros(embed_dim)
    for t in range(steps):
        action, logp = ppo.act(actor, obs, emb, rng)
        value = ppo.value_of(critic, obs, emb)
        reward = 1.0 if action == 0 else -1.0
        roll.add(obs, emb, action, logp, reward, value, t == steps - 1)
    roll.compute_gae(gamma=0.99, lam=0.95)
    return roll


def test_ppo_update_requires_prepared_rollout():
    rng = np.random.default_rng(61)
    actor = ppo.init_actor(3, 2, 4, rng, width=8)
    critic = ppo.init_critic(3, 2, rng, width=8)
    a_state = nd.AdamState.init(actor)
    c_state = nd.AdamState.init(critic)
    cfg = ppo.PPOConfig()
    with pytest.raises(ValueError):
        ppo.ppo_update(ppo.RolloutBuffer(), actor, critic, a_state, c_state, cfg, rng)
    roll = _synthetic_rollout(actor, critic, rng, steps=4)
    roll.advantages = None
    with pytest.raises(ValueError):
        ppo.ppo_update(roll, actor, critic, a_state, c_state, cfg, rng)


def test_ppo_update_shifts_policy_toward_reward():
    rng = np.random.default_rng(71)
    actor = ppo.init_actor(3, 2, 4, rng, width=16)
    critic = ppo.init_critic(3, 2, rng, width=16)
    a_state = nd.AdamState.init(actor, lr=1e-2)
    c_state = nd.AdamState.init(critic, lr=1e-2)
    cfg = ppo.PPOConfig(epochs=2, minibatch_size=64)

    def prob_first():
        x = np.concatenate([np.ones(3), np.zeros(2)])[None, :]
        with nd.no_grad():
            logits = ppo.actor_logits(actor, nd.constant(x)).data[0]
        z = np.exp(logits - logits.max())
        return z[0] / z.sum()

    before = prob_first()
    for _ in range(25):
        roll = _synthetic_rollout(actor, critic, rng)
        stats = ppo.ppo_update(roll, actor, critic, a_state, c_state, cfg, rng)
        assert all(np.isfinite(s) for s in stats)
    assert prob_first() > max(0.8, before)


def test_ppo_update_leaves_encoder_untouched():
    from clamrl import model as mdl

    rng = np.random.default_rng(81)
    config = mdl.ModelConfig(obs_dim=4, d=8, heads=2, layers=1, d_proj=4, max_len=10)
    enc = mdl.init_params(config, rng)
    before = {k: t.data.copy() for k, t in enc.items()}

    traj = rng.normal(size=(6, 4))
    emb = mdl.embed_trajectory(enc, config, traj)
    assert isinstance(emb, np.ndarray)

    actor = ppo.init_actor(4, config.d, 3, rng, width=8)
    critic = ppo.init_critic(4, config.d, rng, width=8)
    roll = ppo.RolloutBuffer()
    for t in range(8):
        obs = rng.normal(size=4)
        action, logp = ppo.act(actor, obs, emb, rng)
        roll.add(obs, emb, action, logp, rng.normal(), ppo.value_of(critic, obs, emb),
                 t == 7)
    roll.compute_gae(0.99, 0.95)
    ppo.ppo_update(roll, actor, critic, nd.AdamState.init(actor),
                   nd.AdamState.init(critic), ppo.PPOConfig(), rng)

    for k, t in enc.items():
        assert t.grad is None
        assert np.array_equal(t.data, before[k])


def test_config_validation():
    with pytest.raises(ValueError):
        ppo.PPOConfig(clip_eps=0.0)
    with pytest.raises(ValueError):
        ppo.PPOConfig(gamma=1.0)
    with pytest.raises(ValueError):
        ppo.PPOConfig(gae_lambda=1.5)
