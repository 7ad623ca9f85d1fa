"""Trajectory encoder for real-time agent modeling.

Observations are linearly embedded, tagged with sinusoidal positions, run
through a pre-layer-norm Transformer encoder, and pooled into one policy
embedding c_t.  Pooling is attention against a trainable policy token by
default, with average and learned-weight-vector variants for ablations.  A
two-layer GELU projection head maps c_t onto the unit sphere for the
contrastive loss only; the raw pooled vector is what conditions the policy.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import ndiff as nd


@dataclass(frozen=True)
class ModelConfig:
    obs_dim: int
    d: int = 64
    heads: int = 4
    layers: int = 2
    d_proj: int = 32
    max_len: int = 50
    pooling: str = "attention"      # attention | average | weight
    init_std: float = 0.02

    def __post_init__(self):
        if self.d % self.heads != 0:
            raise ValueError(f"d={self.d} must be divisible by heads={self.heads}")
        if self.pooling not in ("attention", "average", "weight"):
            raise ValueError(f"unknown pooling {self.pooling!r}")

    @property
    def d_k(self):
        return self.d // self.heads


def positional_table(max_len, d):
    """Sinusoidal position table, (max_len, d): even dims sin, odd dims cos."""
    pos = np.arange(max_len)[:, None]
    i = np.arange(d // 2)[None, :]
    angle = pos / np.power(10000.0, 2 * i / d)
    table = np.zeros((max_len, d))
    table[:, 0::2] = np.sin(angle)
    table[:, 1::2] = np.cos(angle)
    return table


def init_params(config, rng):
    """Gaussian weights (std per config; fan-in scale for the contrastive
    head), zero biases, unit layer-norm gains."""
    p = nd.ParamStore()

    def w(name, rows, cols):
        p.add(name, rng.normal(0.0, config.init_std, size=(rows, cols)))

    def b(name, cols):
        p.add(name, np.zeros((1, cols)))

    def ln(prefix):
        p.add(prefix + ".g", np.ones((1, config.d)))
        p.add(prefix + ".b", np.zeros((1, config.d)))

    def heads(prefix):
        for n in range(config.heads):
            w(f"{prefix}.h{n}.Wq", config.d, config.d_k)
            w(f"{prefix}.h{n}.Wk", config.d, config.d_k)
            w(f"{prefix}.h{n}.Wv", config.d, config.d_k)
        w(f"{prefix}.attn.Wo", config.d, config.d)
        b(f"{prefix}.attn.bo", config.d)

    w("embed.W", config.obs_dim, config.d)
    b("embed.b", config.d)
    for l in range(config.layers):
        ln(f"enc{l}.ln1")
        heads(f"enc{l}")
        ln(f"enc{l}.ln2")
        w(f"enc{l}.ff.W1", config.d, 4 * config.d)
        b(f"enc{l}.ff.b1", 4 * config.d)
        w(f"enc{l}.ff.W2", 4 * config.d, config.d)
        b(f"enc{l}.ff.b2", config.d)
    ln("final.ln")

    if config.pooling == "attention":
        w("pool.P", 1, config.d)
        heads("pool")
    elif config.pooling == "weight":
        w("pool.w", 1, config.max_len)
    w("pool.rff.W1", config.d, config.d)
    b("pool.rff.b1", config.d)
    w("pool.rff.W2", config.d, config.d)
    b("pool.rff.b2", config.d)

    # The contrastive head feeds an L2 normalization; starting it near zero
    # makes the normalized output blow up the first gradients and the head
    # then collapses every input onto one unit vector, a zero-gradient fixed
    # point of the InfoNCE loss.  Fan-in scaling keeps it conditioned.
    def w_head(name, rows, cols):
        p.add(name, rng.normal(0.0, 1.0 / np.sqrt(rows), size=(rows, cols)))

    w_head("proj.W1", config.d, config.d)
    b("proj.b1", config.d)
    w_head("proj.W2", config.d, config.d_proj)
    b("proj.b2", config.d_proj)
    return p


def _multi_head(params, prefix, config, q_in, kv_in, record=None):
    """softmax(Q K^T / sqrt(d_k)) V per head, heads concatenated through Wo."""
    outs = []
    for n in range(config.heads):
        q = nd.matmul(q_in, params[f"{prefix}.h{n}.Wq"])
        k = nd.matmul(kv_in, params[f"{prefix}.h{n}.Wk"])
        v = nd.matmul(kv_in, params[f"{prefix}.h{n}.Wv"])
        logits = nd.scale(nd.matmul(q, nd.transpose(k)), 1.0 / math.sqrt(config.d_k))
        attn = nd.row_softmax(logits)
        if record is not None:
            record.append(attn.data.copy())
        outs.append(nd.matmul(attn, v))
    concat = nd.concat_cols(outs)
    return nd.add(nd.matmul(concat, params[f"{prefix}.attn.Wo"]),
                  params[f"{prefix}.attn.bo"])


def _ln(params, prefix, x):
    return nd.layer_norm(x, params[prefix + ".g"], params[prefix + ".b"])


def embed_inputs(params, obs):
    """Linear map from raw observations (t, obs_dim) to (t, d)."""
    return nd.add(nd.matmul(obs, params["embed.W"]), params["embed.b"])


def positional_encode(x, config):
    """Add the sinusoid table; rejects sequences past the configured max."""
    t = x.shape[0]
    if t > config.max_len:
        raise ValueError(f"trajectory length {t} exceeds max {config.max_len}")
    return nd.add(x, nd.constant(positional_table(config.max_len, config.d)[:t]))


def encode(params, config, x, record=None):
    """Pre-layer-norm Transformer blocks plus a final layer norm."""
    for l in range(config.layers):
        h = _ln(params, f"enc{l}.ln1", x)
        x = nd.add(x, _multi_head(params, f"enc{l}", config, h, h, record=record))
        h = _ln(params, f"enc{l}.ln2", x)
        ff = nd.matmul(nd.gelu(nd.add(nd.matmul(h, params[f"enc{l}.ff.W1"]),
                                      params[f"enc{l}.ff.b1"])),
                       params[f"enc{l}.ff.W2"])
        x = nd.add(x, nd.add(ff, params[f"enc{l}.ff.b2"]))
    return _ln(params, "final.ln", x)


def _rff(params, x):
    h = nd.gelu(nd.add(nd.matmul(x, params["pool.rff.W1"]), params["pool.rff.b1"]))
    return nd.add(nd.matmul(h, params["pool.rff.W2"]), params["pool.rff.b2"])


def pool(params, config, z, record=None, return_pre=False):
    """Aggregate the (t, d) feature sequence into a (1, d) policy embedding."""
    if config.pooling == "attention":
        pre = _multi_head(params, "pool", config, params["pool.P"], z, record=record)
    elif config.pooling == "average":
        pre = nd.mean_rows(z)
    else:  # learned weight vector over the temporal axis, renormalized to t
        w_t = nd.row_softmax(nd.slice_cols(params["pool.w"], 0, z.shape[0]))
        if record is not None:
            record.append(w_t.data.copy())
        pre = nd.matmul(w_t, z)
    c = _rff(params, pre)
    return (c, pre) if return_pre else c


def attention_pool(params, config, z, record=None, return_pre=False):
    if z.shape[0] < 1:
        raise ValueError("cannot pool an empty feature sequence")
    return pool(params, config, z, record=record, return_pre=return_pre)


def project(params, c):
    """Two-layer GELU head then row L2 normalization.

    A zero pre-normalization row (possible at init with a zero input) is
    returned as a zero vector rather than raising.
    """
    h = nd.gelu(nd.add(nd.matmul(c, params["proj.W1"]), params["proj.b1"]))
    h = nd.add(nd.matmul(h, params["proj.W2"]), params["proj.b2"])
    return nd.l2_normalize_rows(h)


def forward(params, config, obs, record=None, return_pre=False):
    """Full online path: embed, position, encode, pool.  obs is (t, obs_dim)."""
    x = positional_encode(embed_inputs(params, obs), config)
    z = encode(params, config, x, record=record)
    return attention_pool(params, config, z, record=record, return_pre=return_pre)


def embed_trajectory(params, config, obs):
    """Policy embedding as a plain (d,) array, no graph.

    Meant for the frozen target copy during rollouts.  An empty trajectory
    falls back to the pooler's feed-forward applied to a zero attention
    output; with freshly zeroed biases that is the zero vector.
    """
    obs = np.asarray(obs, dtype=np.float64)
    with nd.no_grad():
        if obs.size == 0:
            c = _rff(params, nd.constant(np.zeros((1, config.d))))
        else:
            c = forward(params, config, nd.constant(obs))
    return c.data[0].copy()


def make_target(params):
    """Frozen copy; target parameters never require gradients."""
    return params.copy(requires_grad=False)


def ema_update(online, target, tau_ema):
    """target <- tau * online + (1 - tau) * target, entry by entry."""
    if online.names() != target.names():
        raise ValueError("online/target parameter names differ")
    for name, t in target.items():
        o = online[name]
        if o.data.shape != t.data.shape:
            raise ValueError(f"shape mismatch for {name!r}")
        t.data *= (1.0 - tau_ema)
        t.data += tau_ema * o.data
