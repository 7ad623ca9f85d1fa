"""Encoder tests: oracle recomputation, attention invariants, pooling, EMA."""

import math

import numpy as np
import pytest
from scipy.special import erf

from clamrl import model, ndiff as nd


def _cfg(**kw):
    base = dict(obs_dim=5, d=4, heads=2, layers=1, d_proj=3, max_len=50)
    base.update(kw)
    return model.ModelConfig(**base)


def _params(cfg, seed=0):
    return model.init_params(cfg, np.random.default_rng(seed))


# -- independent straight-line recomputation (no graph machinery) --------------

def _np_pos_table(max_len, d):
    pos = np.arange(max_len)[:, None]
    i = np.arange(d // 2)[None, :]
    angle = pos / np.power(10000.0, 2 * i / d)
    out = np.zeros((max_len, d))
    out[:, 0::2] = np.sin(angle)
    out[:, 1::2] = np.cos(angle)
    return out


def _np_ln(x, g, b, eps=1e-8):
    mu = x.mean(axis=1, keepdims=True)
    var = x.var(axis=1, keepdims=True)
    return (x - mu) / np.sqrt(var + eps) * g + b


def _np_gelu(x):
    return 0.5 * x * (1.0 + erf(x / math.sqrt(2.0)))


def _np_softmax(x):
    e = np.exp(x - x.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def _np_mha(arrs, prefix, cfg, q_in, kv_in):
    outs = []
    for n in range(cfg.heads):
        q = q_in @ arrs[f"{prefix}.h{n}.Wq"]
        k = kv_in @ arrs[f"{prefix}.h{n}.Wk"]
        v = kv_in @ arrs[f"{prefix}.h{n}.Wv"]
        a = _np_softmax(q @ k.T / math.sqrt(cfg.d_k))
        outs.append(a @ v)
    return np.concatenate(outs, axis=1) @ arrs[f"{prefix}.attn.Wo"] + arrs[f"{prefix}.attn.bo"]


def _np_encode(arrs, cfg, obs):
    x = obs @ arrs["embed.W"] + arrs["embed.b"]
    x = x + _np_pos_table(cfg.max_len, cfg.d)[:obs.shape[0]]
    for l in range(cfg.layers):
        h = _np_ln(x, arrs[f"enc{l}.ln1.g"], arrs[f"enc{l}.ln1.b"])
        x = x + _np_mha(arrs, f"enc{l}", cfg, h, h)
        h = _np_ln(x, arrs[f"enc{l}.ln2.g"], arrs[f"enc{l}.ln2.b"])
        x = x + _np_gelu(h @ arrs[f"enc{l}.ff.W1"] + arrs[f"enc{l}.ff.b1"]) \
            @ arrs[f"enc{l}.ff.W2"] + arrs[f"enc{l}.ff.b2"]
    return _np_ln(x, arrs["final.ln.g"], arrs["final.ln.b"])


def _np_pool(arrs, cfg, z):
    pre = _np_mha(arrs, "pool", cfg, arrs["pool.P"], z)
    c = _np_gelu(pre @ arrs["pool.rff.W1"] + arrs["pool.rff.b1"]) \
        @ arrs["pool.rff.W2"] + arrs["pool.rff.b2"]
    return c, pre


def _np_project(arrs, c):
    h = _np_gelu(c @ arrs["proj.W1"] + arrs["proj.b1"]) @ arrs["proj.W2"] + arrs["proj.b2"]
    return h / np.linalg.norm(h, axis=1, keepdims=True)


# -- positional encoding ---------------------------------------------------------

def test_positional_encoding_is_additive_and_starts_at_sin0_cos0():
    cfg = _cfg()
    table = model.positional_table(cfg.max_len, cfg.d)
    assert np.all(table[0, 0::2] == 0.0)
    assert np.all(table[0, 1::2] == 1.0)

    rng = np.random.default_rng(0)
    for t in (1, 25, 50):
        a = nd.constant(rng.standard_normal((t, cfg.d)))
        b = nd.constant(rng.standard_normal((t, cfg.d)))
        pa = model.positional_encode(a, cfg)
        pb = model.positional_encode(b, cfg)
        assert pa.shape == (t, cfg.d)
        assert np.allclose(pa.data - a.data, pb.data - b.data, atol=0)

    with pytest.raises(ValueError):
        model.positional_encode(nd.constant(np.zeros((51, cfg.d))), cfg)


def test_config_rejects_indivisible_heads():
    with pytest.raises(ValueError):
        _cfg(d=6, heads=4)
    with pytest.raises(ValueError):
        _cfg(pooling="max")


# -- encoder and pooling against the oracle ----------------------------------------

def test_encoder_matches_straight_line_recomputation():
    cfg = _cfg()
    params = _params(cfg, seed=1)
    arrs = params.arrays()
    obs = np.random.default_rng(2).standard_normal((3, cfg.obs_dim))

    z = model.encode(params, cfg,
                     model.positional_encode(model.embed_inputs(params, nd.constant(obs)), cfg))
    want = _np_encode(arrs, cfg, obs)
    assert np.max(np.abs(z.data - want)) < 1e-9


def test_two_layer_encoder_matches_oracle():
    cfg = _cfg(layers=2, d=8, heads=4, obs_dim=7)
    params = _params(cfg, seed=3)
    obs = np.random.default_rng(4).standard_normal((6, cfg.obs_dim))
    z = model.encode(params, cfg,
                     model.positional_encode(model.embed_inputs(params, nd.constant(obs)), cfg))
    want = _np_encode(params.arrays(), cfg, obs)
    assert np.max(np.abs(z.data - want)) < 1e-9


def test_attention_pool_matches_straight_line_recomputation():
    cfg = _cfg()
    params = _params(cfg, seed=5)
    z_np = np.random.default_rng(6).standard_normal((4, cfg.d))
    c, pre = model.attention_pool(params, cfg, nd.constant(z_np), return_pre=True)
    want_c, want_pre = _np_pool(params.arrays(), cfg, z_np)
    assert c.shape == (1, cfg.d)
    assert np.max(np.abs(pre.data - want_pre)) < 1e-9
    assert np.max(np.abs(c.data - want_c)) < 1e-9


def test_full_forward_and_projection_match_oracle():
    cfg = _cfg()
    params = _params(cfg, seed=7)
    arrs = params.arrays()
    obs = np.random.default_rng(8).standard_normal((5, cfg.obs_dim))
    h = model.project(params, model.forward(params, cfg, nd.constant(obs)))
    want_c, _ = _np_pool(arrs, cfg, _np_encode(arrs, cfg, obs))
    want = _np_project(arrs, want_c)
    assert np.max(np.abs(h.data - want)) < 1e-9


# -- attention weight structure ------------------------------------------------------

def test_attention_rows_sum_to_one():
    cfg = _cfg(layers=2)
    params = _params(cfg, seed=9)
    obs = np.random.default_rng(10).standard_normal((7, cfg.obs_dim))
    record = []
    model.forward(params, cfg, nd.constant(obs), record=record)
    assert len(record) == cfg.heads * (cfg.layers + 1)   # encoder layers + pooler
    for a in record:
        assert np.all(a > 0)
        assert np.max(np.abs(a.sum(axis=1) - 1.0)) < 1e-9


def test_zero_key_weights_give_uniform_attention():
    cfg = _cfg(layers=1)
    params = _params(cfg, seed=11)
    for name in params.names():
        if name.endswith(".Wk"):
            params[name].data[:] = 0.0
    obs = np.random.default_rng(12).standard_normal((5, cfg.obs_dim))
    record = []
    model.forward(params, cfg, nd.constant(obs), record=record)
    enc_weights = record[:cfg.heads]
    for a in enc_weights:
        assert np.max(np.abs(a - 1.0 / 5)) < 1e-12


def test_single_step_trajectory_gets_weight_one():
    cfg = _cfg()
    params = _params(cfg, seed=13)
    obs = np.random.default_rng(14).standard_normal((1, cfg.obs_dim))
    record = []
    model.forward(params, cfg, nd.constant(obs), record=record)
    for a in record:
        assert a.shape == (1, 1)
        assert abs(a[0, 0] - 1.0) < 1e-12


def test_identical_rows_pool_to_common_value_path():
    cfg = _cfg()
    params = _params(cfg, seed=15)
    arrs = params.arrays()
    row = np.random.default_rng(16).standard_normal((1, cfg.d))
    z = np.repeat(row, 6, axis=0)
    _, pre = model.attention_pool(params, cfg, nd.constant(z), return_pre=True)
    heads = [row @ arrs[f"pool.h{n}.Wv"] for n in range(cfg.heads)]
    want = np.concatenate(heads, axis=1) @ arrs["pool.attn.Wo"] + arrs["pool.attn.bo"]
    assert np.max(np.abs(pre.data - want)) < 1e-9


# -- pooling variants -------------------------------------------------------------

def test_average_pooling_uses_plain_mean():
    cfg = _cfg(pooling="average")
    params = _params(cfg, seed=17)
    arrs = params.arrays()
    z = np.random.default_rng(18).standard_normal((5, cfg.d))
    c, pre = model.pool(params, cfg, nd.constant(z), return_pre=True)
    assert np.max(np.abs(pre.data - z.mean(axis=0, keepdims=True))) < 1e-12
    assert "pool.P" not in params


def test_weight_pooling_renormalizes_over_prefix():
    cfg = _cfg(pooling="weight")
    params = _params(cfg, seed=19)
    z = np.random.default_rng(20).standard_normal((4, cfg.d))
    record = []
    c, pre = model.pool(params, cfg, nd.constant(z), record=record, return_pre=True)
    (w,) = record
    assert w.shape == (1, 4)
    assert abs(w.sum() - 1.0) < 1e-12
    assert np.max(np.abs(pre.data - w @ z)) < 1e-12


# -- projection head --------------------------------------------------------------

def test_projection_is_unit_norm_and_nonhomogeneous():
    cfg = _cfg()
    params = _params(cfg, seed=21)
    c = nd.constant(np.random.default_rng(22).standard_normal((1, cfg.d)))
    h1 = model.project(params, c)
    assert abs(np.linalg.norm(h1.data) - 1.0) < 1e-9
    h2 = model.project(params, nd.scale(c, 2.0))
    assert np.max(np.abs(h1.data - h2.data)) > 1e-6    # head is nonlinear

    zero = model.project(params, nd.constant(np.zeros((1, cfg.d))))
    assert np.all(zero.data == 0.0)                    # degenerate fallback


# -- trajectory embedding and targets ----------------------------------------------

def test_embed_trajectory_matches_online_for_fresh_target():
    cfg = _cfg()
    params = _params(cfg, seed=23)
    target = model.make_target(params)
    obs = np.random.default_rng(24).standard_normal((9, cfg.obs_dim))
    online_c = model.forward(params, cfg, nd.constant(obs)).data[0]
    assert np.allclose(model.embed_trajectory(target, cfg, obs), online_c, atol=1e-12)
    for t in (1, 50):
        c = model.embed_trajectory(target, cfg, np.zeros((t, cfg.obs_dim)))
        assert c.shape == (cfg.d,)
        assert np.all(np.isfinite(c))


def test_embed_trajectory_empty_falls_back_to_rff_of_zero():
    cfg = _cfg()
    params = _params(cfg, seed=25)
    arrs = params.arrays()
    c = model.embed_trajectory(params, cfg, np.zeros((0, cfg.obs_dim)))
    want = _np_gelu(np.zeros((1, cfg.d)) @ arrs["pool.rff.W1"] + arrs["pool.rff.b1"]) \
        @ arrs["pool.rff.W2"] + arrs["pool.rff.b2"]
    assert np.allclose(c, want[0], atol=1e-12)


def test_outputs_finite_for_random_params_and_lengths():
    cfg = _cfg(d=8, heads=2, layers=2, obs_dim=6)
    params = _params(cfg, seed=26)
    gen = np.random.default_rng(27)
    for t in (1, 3, 17, 50):
        c = model.embed_trajectory(params, cfg, gen.standard_normal((t, cfg.obs_dim)))
        assert np.all(np.isfinite(c))


def test_permuting_steps_changes_output_only_with_positions():
    # wider init keeps activations O(1) so the witness is not lost in noise
    cfg = _cfg(layers=1, init_std=0.5)
    params = _params(cfg, seed=28)
    gen = np.random.default_rng(29)
    obs = gen.standard_normal((6, cfg.obs_dim))
    perm = gen.permutation(6)

    c1 = model.forward(params, cfg, nd.constant(obs)).data
    c2 = model.forward(params, cfg, nd.constant(obs[perm])).data
    assert np.max(np.abs(c1 - c2)) > 1e-6    # positions break symmetry

    # without positions a single self-attention layer is permutation
    # equivariant, so the pooled pre-rFF vector is permutation invariant
    def pooled_pre(o):
        z = model.encode(params, cfg, model.embed_inputs(params, nd.constant(o)))
        _, pre = model.attention_pool(params, cfg, z, return_pre=True)
        return pre.data

    assert np.max(np.abs(pooled_pre(obs) - pooled_pre(obs[perm]))) < 1e-12


# -- EMA target updates --------------------------------------------------------------

def test_ema_update_blends_and_validates():
    cfg = _cfg()
    online = _params(cfg, seed=30)
    target = model.make_target(online)
    for _, t in target.items():
        assert not t.requires_grad

    before = {k: v.copy() for k, v in target.arrays().items()}
    model.ema_update(online, target, 0.0)
    assert all(np.array_equal(target[k].data, before[k]) for k in before)

    model.ema_update(online, target, 1.0)
    assert all(np.array_equal(target[k].data, online[k].data) for k in before)

    a, b = nd.ParamStore(), nd.ParamStore()
    a.add("x", np.full((1, 1), 2.0))
    b.add("x", np.zeros((1, 1)), requires_grad=False)
    model.ema_update(a, b, 0.5)
    assert b["x"].data[0, 0] == 1.0

    c = nd.ParamStore()
    c.add("y", np.zeros((1, 1)))
    with pytest.raises(ValueError):
        model.ema_update(a, c, 0.5)
    d = nd.ParamStore()
    d.add("x", np.zeros((2, 1)))
    with pytest.raises(ValueError):
        model.ema_update(a, d, 0.5)


def test_target_parameters_receive_no_gradients():
    cfg = _cfg()
    online = _params(cfg, seed=31)
    target = model.make_target(online)
    obs = np.random.default_rng(32).standard_normal((4, cfg.obs_dim))
    loss = nd.sum_all(model.forward(target, cfg, nd.constant(obs)))
    nd.backward(loss)
    assert all(t.grad is None for _, t in target.items())


# -- gradients through the whole stack ---------------------------------------------

def test_full_model_gradients_match_finite_differences():
    # std 0.02 leaves the pre-normalization projection output near zero,
    # where the unit-sphere map is too ill-conditioned for finite
    # differences; a wider init puts the check in the smooth regime
    cfg = _cfg(d=4, heads=2, layers=1, obs_dim=3, d_proj=2, init_std=0.5)
    params = _params(cfg, seed=33)
    obs = np.random.default_rng(34).standard_normal((4, cfg.obs_dim))
    probe = nd.constant(np.random.default_rng(35).standard_normal((1, cfg.d_proj)))

    def loss_fn():
        h = model.project(params, model.forward(params, cfg, nd.constant(obs)))
        return nd.sum_all(nd.mul(h, probe))

    report = nd.grad_check(loss_fn, params, h=1e-5, tol=1e-4,
                           max_coords_per_param=4,
                           rng=np.random.default_rng(36), denom_floor=1e-3)
    assert report.passed, report.summary()


def test_contrastive_head_uses_fan_in_scale_init():
    cfg = _cfg(d=64, layers=1, init_std=0.02)
    params = model.init_params(cfg, np.random.default_rng(123))
    body = params["enc0.ff.W1"].data
    head = params["proj.W1"].data
    assert abs(body.std() - 0.02) < 0.005
    assert abs(head.std() - 1.0 / np.sqrt(cfg.d)) < 0.03
    assert np.all(params["proj.b1"].data == 0.0)
    assert np.all(params["proj.b2"].data == 0.0)
