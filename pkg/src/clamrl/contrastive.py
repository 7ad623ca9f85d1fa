"""Contrastive trajectory representation learning.

Episodes land in a FIFO replay buffer.  An update samples a batch, crops two
windows per trajectory, zero-masks a fixed fraction of rows on one side only
(the strong branch), runs both branches through the online encoder and
projection head, and minimizes InfoNCE with the matching window as the
positive and the rest of the strong batch as negatives.  Policy labels ride
along for evaluation but never enter the loss.
"""

from __future__ import annotations

import math
import warnings
from collections import deque
from dataclasses import dataclass

import numpy as np

from . import model, ndiff as nd


@dataclass(frozen=True)
class ContrastiveConfig:
    batch_size: int = 64
    temperature: float = 0.1
    mask_ratio: float = 0.3
    crop_len_min: int = 8
    crop_len_max: int = 50
    lr: float = 3e-4
    clip_norm: float = 1.0        # global gradient-norm ceiling; None disables
    bidirectional: bool = False   # symmetric two-directional loss, off by default

    def __post_init__(self):
        if not 1 <= self.crop_len_min <= self.crop_len_max <= 50:
            raise ValueError("need 1 <= crop_len_min <= crop_len_max <= 50")
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")
        if not 0.0 <= self.mask_ratio <= 1.0:
            raise ValueError("mask_ratio must lie in [0, 1]")
        if self.batch_size < 1:
            raise ValueError("batch_size must be positive")
        if self.clip_norm is not None and self.clip_norm <= 0:
            raise ValueError("clip_norm must be positive or None")


class ReplayBuffer:
    """Ring of (trajectory, policy label) episodes with FIFO eviction."""

    def __init__(self, capacity, min_len=1):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = int(capacity)
        self.min_len = int(min_len)
        self._episodes = deque(maxlen=self.capacity)

    def __len__(self):
        return len(self._episodes)

    @property
    def full(self):
        return len(self._episodes) >= self.capacity

    def store(self, trajectory, label):
        """Append one episode; too-short episodes are skipped with a warning."""
        trajectory = np.asarray(trajectory, dtype=np.float64)
        if trajectory.shape[0] < self.min_len:
            warnings.warn(f"skipping episode of length {trajectory.shape[0]} "
                          f"(< {self.min_len})")
            return False
        self._episodes.append((trajectory, int(label)))
        return True

    def episode(self, i):
        return self._episodes[i]

    def sample(self, rng, n):
        """n distinct episodes, uniform without replacement."""
        if n > len(self._episodes):
            raise ValueError("not enough stored episodes to sample")
        idx = rng.choice(len(self._episodes), size=n, replace=False)
        return [self._episodes[int(i)] for i in idx]


def crop_pair(trajectory, rng, config):
    """Two windows with independent uniform lengths and starts; may overlap."""
    t = trajectory.shape[0]
    if t < config.crop_len_min:
        raise ValueError(f"trajectory length {t} below crop_len_min "
                         f"{config.crop_len_min}")
    hi = min(config.crop_len_max, t)

    def one():
        length = int(rng.integers(config.crop_len_min, hi + 1))
        start = int(rng.integers(0, t - length + 1))
        return trajectory[start:start + length]

    return one(), one()


def mask_strong(window, mask_ratio, rng):
    """Zero exactly floor(mask_ratio * len) distinct rows, chosen uniformly."""
    out = np.array(window, copy=True)
    k = math.floor(mask_ratio * out.shape[0])
    if k > 0:
        idx = rng.choice(out.shape[0], size=k, replace=False)
        out[idx] = 0.0
    return out


def info_nce_loss(c_weak, c_strong, temperature, bidirectional=False):
    """-1/N sum_i log softmax_k(c'_i . c''_k / temperature)[i].

    Rows are expected to be unit-normalized projections; the denominator runs
    over the strong branch only unless bidirectional is set, in which case
    the two directions are averaged.
    """
    n = c_weak.shape[0]
    if n < 2:
        warnings.warn("InfoNCE over fewer than 2 pairs is degenerate")
    sims = nd.scale(nd.matmul(c_weak, nd.transpose(c_strong)), 1.0 / temperature)
    diag = np.arange(n)

    def one_direction(logits):
        pos = nd.gather_rows(nd.row_softmax(logits), diag)
        return nd.scale(nd.mean_all(nd.log(pos)), -1.0)

    loss = one_direction(sims)
    if bidirectional:
        loss = nd.scale(nd.add(loss, one_direction(nd.transpose(sims))), 0.5)
    return loss


@dataclass
class AugmentedBatch:
    weak: list           # N windows, untouched crops
    strong: list         # N windows with masked rows
    labels: np.ndarray   # policy labels, evaluation only
    sources: list        # the source episode arrays, for provenance checks


def build_batch(buffer, config, rng):
    episodes = buffer.sample(rng, config.batch_size)
    weak, strong, labels, sources = [], [], [], []
    for traj, label in episodes:
        s1, s2 = crop_pair(traj, rng, config)
        weak.append(np.array(s1, copy=True))
        strong.append(mask_strong(s2, config.mask_ratio, rng))
        labels.append(label)
        sources.append(traj)
    return AugmentedBatch(weak, strong, np.asarray(labels), sources)


def batch_loss(params, model_config, batch, config):
    """InfoNCE over one augmented batch, built on the online parameters."""
    weak_h = [model.project(params, model.forward(params, model_config,
                                                  nd.constant(w)))
              for w in batch.weak]
    strong_h = [model.project(params, model.forward(params, model_config,
                                                    nd.constant(s)))
                for s in batch.strong]
    return info_nce_loss(nd.concat_rows(weak_h), nd.concat_rows(strong_h),
                         config.temperature, config.bidirectional)


def clam_update(buffer, params, adam_state, model_config, config, rng):
    """One contrastive update; no-op (returns None) until the buffer is full."""
    if not buffer.full:
        return None
    batch = build_batch(buffer, config, rng)
    loss = batch_loss(params, model_config, batch, config)
    params.zero_grad()
    nd.backward(loss)
    if config.clip_norm is not None:
        nd.clip_grad_norm(params, config.clip_norm)
    nd.adam_step(params, adam_state)
    return float(loss.item())
