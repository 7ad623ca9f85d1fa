"""Two desk-scale multi-agent environments with fixed modeled-policy sets."""

from .base import (EnvSpec, FixedPolicy, PolicySet, Transition,
                   episode_record, fixed_policy_act, read_episode_log,
                   sample_modeled_policy, write_episode_log)
from .lbf import LBFEnv, LBFState, pickup_fraction
from .lbf_policies import lbf_policy_set
from .pp_policies import pp_policy_set
from .predator_prey import PPState, PredatorPreyEnv

ENV_KINDS = ("lbf", "pp")


def make_env(kind, **kwargs):
    if kind == "lbf":
        return LBFEnv(**kwargs)
    if kind == "pp":
        return PredatorPreyEnv(**kwargs)
    raise ValueError(f"unknown environment kind {kind!r}")


def make_policy_set(kind, **kwargs):
    if kind == "lbf":
        return lbf_policy_set(**kwargs)
    if kind == "pp":
        return pp_policy_set(**kwargs)
    raise ValueError(f"unknown environment kind {kind!r}")
