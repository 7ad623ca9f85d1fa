"""Shared environment plumbing: spec records, transitions, episode logs."""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Callable

import numpy as np


@dataclass(frozen=True)
class EnvSpec:
    """Static shape information for one environment instance."""

    name: str
    agent_count: int
    obs_dims: tuple          # per agent, ego agent first
    action_counts: tuple     # per agent, ego agent first
    max_episode_steps: int
    reward_semantics: str


@dataclass
class Transition:
    """One logged step from the ego agent's point of view."""

    obs_ego: np.ndarray       # (obs_dim_ego,)
    obs_modeled: np.ndarray   # modeled agent obs; team obs are flattened to one vector
    action_ego: int
    action_modeled: object    # scalar id, or an id per teammate for team policies
    reward: float
    done: bool


@dataclass(frozen=True)
class FixedPolicy:
    """Hand-coded modeled-agent controller.

    act maps (observation, rng) to an action id, or to one id per teammate
    for team policies.  It must be deterministic given the observation and
    the rng stream state.
    """

    id: str
    act: Callable


@dataclass(frozen=True)
class PolicySet:
    """Ordered collection of fixed policies; the index is the policy label."""

    policies: tuple

    def __post_init__(self):
        ids = [p.id for p in self.policies]
        if not ids:
            raise ValueError("policy set is empty")
        if len(ids) != len(set(ids)):
            raise ValueError("policy ids must be unique")

    @property
    def labels(self):
        return {p.id: i for i, p in enumerate(self.policies)}

    def __len__(self):
        return len(self.policies)

    def subset(self, indices):
        return PolicySet(tuple(self.policies[i] for i in indices))


def sample_modeled_policy(policy_set, rng):
    """Uniform draw over the set; returns the policy index."""
    return int(rng.integers(len(policy_set.policies)))


def fixed_policy_act(policy, obs, rng):
    return policy.act(obs, rng)


def episode_record(seed, policy_index, transitions):
    """JSON-ready dict for one episode.

    Floats are serialized with repr precision, so a write/read round trip
    reproduces every value bit-exactly.
    """
    steps = []
    for tr in transitions:
        steps.append([
            np.asarray(tr.obs_ego, dtype=float).tolist(),
            np.asarray(tr.obs_modeled, dtype=float).tolist(),
            int(tr.action_ego),
            [int(v) for v in np.atleast_1d(tr.action_modeled)],
            float(tr.reward),
        ])
    return {"seed": int(seed), "policy": int(policy_index), "steps": steps}


def write_episode_log(path, records):
    with open(path, "w") as fh:
        for rec in records:
            fh.write(json.dumps(rec) + "\n")


def read_episode_log(path):
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]
