"""Continuous pursuit arena: three scripted predators chase the learning prey.

Five actions per agent (up, down, left, right, stay) set a fixed-magnitude
acceleration.  Point masses integrate with velocity damping, per-type speed
caps, reflecting walls on [-1, 1]^2, and two solid circular obstacles that
push overlapping agents back out.  Agents pass through each other: contacts
only trigger rewards, one event per overlapping pair per step.  An episode
always runs the full 50 steps.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .base import EnvSpec

N_ACTIONS = 5
UP, DOWN, LEFT, RIGHT, STAY = range(N_ACTIONS)
ACTION_VEC = np.array([[0.0, 1.0], [0.0, -1.0], [-1.0, 0.0], [1.0, 0.0], [0.0, 0.0]])

DT = 0.1
DAMPING = 0.25
ACCEL_PRED, ACCEL_PREY = 3.0, 4.0
MAX_SPEED_PRED, MAX_SPEED_PREY = 1.0, 1.3
R_PRED, R_PREY, R_OBST = 0.075, 0.05, 0.2

CATCH_REWARD = 10.0   # predator-prey contact: prey -10, that predator +10
CRASH_REWARD = 3.0    # predator-predator contact: each -3, prey +3


@dataclass
class PPState:
    pos: np.ndarray              # (4, 2) prey first, then 3 predators
    vel: np.ndarray              # (4, 2)
    obstacle_pos: np.ndarray     # (2, 2)
    obstacle_radius: np.ndarray  # (2,)
    step_count: int
    done: bool


def integrate(pos, vel, action, accel, max_speed):
    """One physics step for a single point mass, including wall reflection."""
    v = vel * (1.0 - DAMPING) + ACTION_VEC[action] * accel * DT
    speed = float(np.linalg.norm(v))
    if speed > max_speed:
        v = v * (max_speed / speed)
    p = pos + v * DT
    v = v.copy()
    for ax in (0, 1):
        if p[ax] < -1.0:
            p[ax] = -2.0 - p[ax]
            v[ax] = -v[ax]
        elif p[ax] > 1.0:
            p[ax] = 2.0 - p[ax]
            v[ax] = -v[ax]
    return p, v


class PredatorPreyEnv:
    """One prey (the ego agent, index 0) versus a scripted predator team."""

    ego_agent = 0
    n_predators = 3

    def __init__(self):
        self.spec = EnvSpec(
            name="pp",
            agent_count=4,
            obs_dims=(14, 16, 16, 16),
            action_counts=(N_ACTIONS,) * 4,
            max_episode_steps=50,
            reward_semantics="contact rewards: catch -10/+10, predator crash -3 each / prey +3",
        )
        self._radii = np.array([R_PREY, R_PRED, R_PRED, R_PRED])
        self._accel = np.array([ACCEL_PREY, ACCEL_PRED, ACCEL_PRED, ACCEL_PRED])
        self._max_speed = np.array([MAX_SPEED_PREY, MAX_SPEED_PRED, MAX_SPEED_PRED,
                                    MAX_SPEED_PRED])

    # -- layout ------------------------------------------------------------

    def reset(self, rng):
        for _ in range(1000):
            obst = rng.uniform(-0.5, 0.5, size=(2, 2))
            pos = rng.uniform(-0.9, 0.9, size=(4, 2))
            if self._layout_clear(pos, obst):
                state = PPState(
                    pos=pos,
                    vel=np.zeros((4, 2)),
                    obstacle_pos=obst,
                    obstacle_radius=np.full(2, R_OBST),
                    step_count=0,
                    done=False,
                )
                return state, self._all_obs(state)
        raise RuntimeError("could not place a collision-free layout")

    def _layout_clear(self, pos, obst):
        if np.linalg.norm(obst[0] - obst[1]) <= 2 * R_OBST:
            return False
        for i in range(4):
            for j in range(i + 1, 4):
                if np.linalg.norm(pos[i] - pos[j]) <= self._radii[i] + self._radii[j]:
                    return False
            for o in range(2):
                if np.linalg.norm(pos[i] - obst[o]) <= self._radii[i] + R_OBST:
                    return False
        return True

    # -- observations --------------------------------------------------------

    def _prey_obs(self, s):
        rel_pred = (s.pos[1:] - s.pos[0]).ravel()
        rel_obst = (s.obstacle_pos - s.pos[0]).ravel()
        return np.concatenate([s.pos[0], s.vel[0], rel_pred, rel_obst])

    def _pred_obs(self, s, k):
        i = 1 + k
        others = [1 + j for j in range(self.n_predators) if j != k]
        return np.concatenate([
            s.pos[i], s.vel[i],
            (s.pos[others] - s.pos[i]).ravel(),
            s.pos[0] - s.pos[i], s.vel[0],
            (s.obstacle_pos - s.pos[i]).ravel(),
        ])

    def _all_obs(self, state):
        return [self._prey_obs(state)] + [self._pred_obs(state, k)
                                          for k in range(self.n_predators)]

    def modeled_obs(self, obs_list):
        return np.stack(obs_list[1:])     # (3, 16) joint predator view

    def joint_actions(self, ego_action, modeled_action):
        team = [int(a) for a in np.atleast_1d(modeled_action)]
        return [int(ego_action)] + team

    def modeled_action_label(self, modeled_action):
        # probes predict the first predator's action
        return int(np.atleast_1d(modeled_action)[0])

    # -- dynamics ------------------------------------------------------------

    def step(self, state, actions):
        if state.done:
            raise RuntimeError("episode already done; reset before stepping")
        actions = [int(a) for a in actions]
        if len(actions) != 4:
            raise ValueError("expected 4 actions: prey then 3 predators")
        for a in actions:
            if not 0 <= a < N_ACTIONS:
                raise ValueError(f"action {a} out of range [0, {N_ACTIONS})")

        pos, vel = state.pos.copy(), state.vel.copy()
        for i in range(4):
            p, v = integrate(pos[i], vel[i], actions[i], self._accel[i],
                             self._max_speed[i])
            # solid obstacles: project out, cancel the inward radial velocity
            for o in range(2):
                d = p - state.obstacle_pos[o]
                dist = float(np.linalg.norm(d))
                min_dist = state.obstacle_radius[o] + self._radii[i]
                if dist < min_dist:
                    u = d / dist if dist > 1e-9 else np.array([1.0, 0.0])
                    p = state.obstacle_pos[o] + u * min_dist
                    inward = float(np.dot(v, u))
                    if inward < 0:
                        v = v - inward * u
            pos[i], vel[i] = p, v

        rewards = np.zeros(4)
        for k in range(1, 4):
            if np.linalg.norm(pos[k] - pos[0]) < self._radii[k] + self._radii[0]:
                rewards[0] -= CATCH_REWARD
                rewards[k] += CATCH_REWARD
        for k in range(1, 4):
            for m in range(k + 1, 4):
                if np.linalg.norm(pos[k] - pos[m]) < 2 * R_PRED:
                    rewards[k] -= CRASH_REWARD
                    rewards[m] -= CRASH_REWARD
                    rewards[0] += CRASH_REWARD

        step_count = state.step_count + 1
        done = step_count >= self.spec.max_episode_steps
        new_state = PPState(pos, vel, state.obstacle_pos, state.obstacle_radius,
                            step_count, done)
        return new_state, self._all_obs(new_state), rewards, done
