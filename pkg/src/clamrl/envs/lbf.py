"""Level-based foraging on a small grid: two agents collect levelled apples.

Actions: 0 noop, 1 up, 2 down, 3 left, 4 right, 5 load.  Moves into walls,
uncollected apples, or the other agent are no-ops, and move conflicts resolve
in agent-index order.  An apple is collected when the summed level of the
adjacent loading agents reaches its level; every layout contains at least one
apple above the strongest single agent, so clearing the grid takes teamwork.

Pickup rewards are normalized so a fully cleared episode pays out exactly 1
across both agents, with each apple's share split in proportion to the
loaders' levels.  The exact accounting is integral (see POINT_SCALE); the
float rewards returned by step() are the points divided by the episode
denominator.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .base import EnvSpec

N_ACTIONS = 6
NOOP, UP, DOWN, LEFT, RIGHT, LOAD = range(N_ACTIONS)
MOVE_VEC = {UP: (-1, 0), DOWN: (1, 0), LEFT: (0, -1), RIGHT: (0, 1)}

MAX_LEVEL = 3
# Apple j pays POINT_SCALE * level_j points.  12 is divisible by every
# possible loader level sum (1..4), so proportional splits stay integral and
# a cleared episode's points always sum to POINT_SCALE * sum(apple levels).
POINT_SCALE = 12


@dataclass
class LBFState:
    grid_size: tuple            # (rows, cols)
    agent_pos: np.ndarray       # (2, 2) int
    agent_levels: np.ndarray    # (2,) int
    apple_pos: np.ndarray       # (n_apples, 2) int
    apple_levels: np.ndarray    # (n_apples,) int
    collected: np.ndarray       # (n_apples,) bool
    step_count: int
    done: bool
    points: np.ndarray          # (2,) int exact pickup ledger


def pickup_fraction(state):
    """Exact cumulative pickup reward as a rational; 1 iff the grid is clear."""
    denom = POINT_SCALE * int(state.apple_levels.sum())
    return Fraction(int(state.points.sum()), denom)


def _adjacent(a, b):
    return abs(int(a[0]) - int(b[0])) + abs(int(a[1]) - int(b[1])) == 1


class LBFEnv:
    """Two-agent level-based foraging; agent 0 is the ego agent."""

    ego_agent = 0

    def __init__(self, rows=8, cols=8, n_apples=4):
        if rows < 3 or cols < 3:
            raise ValueError("grid must be at least 3x3")
        if 2 + n_apples > rows * cols:
            raise ValueError("too many apples for grid size")
        self.rows, self.cols, self.n_apples = rows, cols, n_apples
        self.obs_dim = 6 + 4 * n_apples
        self.spec = EnvSpec(
            name="lbf",
            agent_count=2,
            obs_dims=(self.obs_dim, self.obs_dim),
            action_counts=(N_ACTIONS, N_ACTIONS),
            max_episode_steps=50,
            reward_semantics="normalized cooperative pickup; a full clear pays 1 total",
        )

    # -- layout ------------------------------------------------------------

    def reset(self, rng):
        agent_levels = rng.integers(1, 3, size=2)           # u{1, 2}
        cap = min(MAX_LEVEL, int(agent_levels.sum()))
        apple_levels = rng.integers(1, cap + 1, size=self.n_apples)
        # force one apple past the strongest single agent so teamwork is needed
        coop_lo = int(agent_levels.max()) + 1
        apple_levels[rng.integers(self.n_apples)] = rng.integers(coop_lo, cap + 1)
        agent_pos, apple_pos = self._place_entities(rng)
        state = LBFState(
            grid_size=(self.rows, self.cols),
            agent_pos=agent_pos,
            agent_levels=agent_levels.astype(np.int64),
            apple_pos=apple_pos,
            apple_levels=apple_levels.astype(np.int64),
            collected=np.zeros(self.n_apples, dtype=bool),
            step_count=0,
            done=False,
            points=np.zeros(2, dtype=np.int64),
        )
        return state, self._all_obs(state)

    def _place_entities(self, rng):
        cells = self.rows * self.cols
        for _ in range(1000):
            flat = rng.choice(cells, size=2 + self.n_apples, replace=False)
            pos = np.stack([flat // self.cols, flat % self.cols], axis=1)
            agent_pos, apple_pos = pos[:2], pos[2:]
            if self._apples_loadable(apple_pos):
                return agent_pos.astype(np.int64), apple_pos.astype(np.int64)
        raise ValueError("could not place agents and apples; grid too crowded")

    def _apples_loadable(self, apple_pos):
        # every apple needs two free adjacent cells so a pair can load it
        apple_cells = {tuple(p) for p in apple_pos.tolist()}
        for r, c in apple_pos.tolist():
            free = 0
            for dr, dc in MOVE_VEC.values():
                rr, cc = r + dr, c + dc
                if 0 <= rr < self.rows and 0 <= cc < self.cols and (rr, cc) not in apple_cells:
                    free += 1
            if free < 2:
                return False
        return True

    # -- observations --------------------------------------------------------

    def _obs(self, state, i):
        """Flat vector: own pos + level, teammate flag + pos, then per apple
        pos + level + collected.  Positions are scaled to [0, 1]."""
        rows, cols = state.grid_size
        rs, cs = rows - 1, cols - 1
        me, other = state.agent_pos[i], state.agent_pos[1 - i]
        parts = [me[0] / rs, me[1] / cs, state.agent_levels[i] / MAX_LEVEL,
                 1.0, other[0] / rs, other[1] / cs]
        for j in range(len(state.apple_pos)):
            parts += [state.apple_pos[j, 0] / rs, state.apple_pos[j, 1] / cs,
                      state.apple_levels[j] / MAX_LEVEL, float(state.collected[j])]
        return np.asarray(parts, dtype=np.float64)

    def _all_obs(self, state):
        return [self._obs(state, 0), self._obs(state, 1)]

    def modeled_obs(self, obs_list):
        return obs_list[1]

    def joint_actions(self, ego_action, modeled_action):
        return [int(ego_action), int(modeled_action)]

    def modeled_action_label(self, modeled_action):
        return int(modeled_action)

    # -- dynamics ------------------------------------------------------------

    def step(self, state, actions):
        if state.done:
            raise RuntimeError("episode already done; reset before stepping")
        actions = [int(a) for a in actions]
        for a in actions:
            if not 0 <= a < N_ACTIONS:
                raise ValueError(f"action {a} out of range [0, {N_ACTIONS})")

        rows, cols = state.grid_size
        apple_cells = {tuple(p) for p, got in zip(state.apple_pos.tolist(), state.collected)
                       if not got}
        pos = [tuple(p) for p in state.agent_pos.tolist()]
        # agents move one at a time, so index 0 wins contested cells
        for i in (0, 1):
            a = actions[i]
            if a in MOVE_VEC:
                nxt = (pos[i][0] + MOVE_VEC[a][0], pos[i][1] + MOVE_VEC[a][1])
                if (0 <= nxt[0] < rows and 0 <= nxt[1] < cols
                        and nxt not in apple_cells and nxt != pos[1 - i]):
                    pos[i] = nxt

        collected = state.collected.copy()
        step_points = np.zeros(2, dtype=np.int64)
        for j in range(len(state.apple_pos)):
            if collected[j]:
                continue
            loaders = [i for i in (0, 1)
                       if actions[i] == LOAD and _adjacent(pos[i], state.apple_pos[j])]
            if not loaders:
                continue
            lsum = int(state.agent_levels[loaders].sum())
            if lsum < int(state.apple_levels[j]):
                continue
            collected[j] = True
            worth = POINT_SCALE * int(state.apple_levels[j])
            for i in loaders:
                step_points[i] += worth * int(state.agent_levels[i]) // lsum

        denom = POINT_SCALE * int(state.apple_levels.sum())
        rewards = step_points / denom
        step_count = state.step_count + 1
        done = bool(collected.all()) or step_count >= self.spec.max_episode_steps
        new_state = LBFState(
            grid_size=state.grid_size,
            agent_pos=np.asarray(pos, dtype=np.int64),
            agent_levels=state.agent_levels,
            apple_pos=state.apple_pos,
            apple_levels=state.apple_levels,
            collected=collected,
            step_count=step_count,
            done=done,
            points=state.points + step_points,
        )
        return new_state, self._all_obs(new_state), rewards, done


def decode_obs(obs, rows=8, cols=8, n_apples=4):
    """Invert the observation scaling back to grid entities.

    Returns (own_pos, own_level, other_pos, apples) where apples is a list of
    (pos, level, collected) triples.
    """
    rs, cs = rows - 1, cols - 1
    me = (round(obs[0] * rs), round(obs[1] * cs))
    own_level = round(obs[2] * MAX_LEVEL)
    other = (round(obs[4] * rs), round(obs[5] * cs))
    apples = []
    for j in range(n_apples):
        k = 6 + 4 * j
        apples.append(((round(obs[k] * rs), round(obs[k + 1] * cs)),
                       round(obs[k + 2] * MAX_LEVEL), obs[k + 3] > 0.5))
    return me, own_level, other, apples
