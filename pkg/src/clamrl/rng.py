"""Named random streams derived from one master seed.

Each component (env, policy sampling, augmentation, init, action sampling)
draws from its own counter-based stream, so changing how one component
consumes randomness never shifts the others.
"""

from __future__ import annotations

import hashlib

import numpy as np

STREAM_NAMES = (
    "init", "env", "policy", "augment", "action", "modeled", "ppo", "eval",
)


def _name_key(name: str) -> int:
    digest = hashlib.sha256(name.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")


def stream(master_seed: int, name: str, counter: int = 0) -> np.random.Generator:
    """Deterministic generator for (master_seed, name, counter)."""
    seq = np.random.SeedSequence(entropy=int(master_seed),
                                 spawn_key=(_name_key(name), int(counter)))
    return np.random.Generator(np.random.PCG64(seq))


class StreamSet:
    """Holds one persistent generator per named component."""

    def __init__(self, master_seed: int):
        self.master_seed = int(master_seed)
        self._streams = {name: stream(master_seed, name) for name in STREAM_NAMES}

    def __getitem__(self, name: str) -> np.random.Generator:
        return self._streams[name]

    def episode_seed(self, name: str, episode: int) -> int:
        """Stable per-episode seed (used for env resets, logged for replay)."""
        g = stream(self.master_seed, name, counter=episode)
        return int(g.integers(0, 2**63 - 1))

    def state_dict(self) -> dict:
        return {name: g.bit_generator.state for name, g in self._streams.items()}

    def load_state_dict(self, state: dict) -> None:
        for name, st in state.items():
            self._streams[name].bit_generator.state = st
