"""Ten scripted predator-team controllers.

A team policy sees the stacked (3, 16) predator observations and returns one
action per predator.  The shared pursuit primitive rolls each candidate
action through one physics step (walls included, obstacles ignored) and takes
the one landing nearest a target point, breaking ties in action order.
"""

from __future__ import annotations

import numpy as np

from .base import FixedPolicy, PolicySet
from .predator_prey import (ACCEL_PRED, ACTION_VEC, MAX_SPEED_PRED, N_ACTIONS,
                            STAY, integrate)

_CORNERS = np.array([[0.8, 0.8], [0.8, -0.8], [-0.8, 0.8], [-0.8, -0.8]])
_ANCHORS = np.array([[0.0, 0.7], [-0.6, -0.5], [0.6, -0.5]])
_FLANK = 0.35


def _decode(obs):
    """(3, 16) joint view -> own positions/velocities, prey position/velocity."""
    own = obs[:, 0:2]
    vel = obs[:, 2:4]
    prey_pos = own[0] + obs[0, 8:10]
    prey_vel = obs[0, 10:12]
    return own, vel, prey_pos, prey_vel


def _pursuit_action(pos, vel, target):
    best, best_d = STAY, None
    for a in range(N_ACTIONS):
        p, _ = integrate(pos, vel, a, ACCEL_PRED, MAX_SPEED_PRED)
        d = float(np.linalg.norm(p - target))
        if best_d is None or d < best_d:
            best, best_d = a, d
    return best


def _clip_target(t):
    return np.clip(t, -0.95, 0.95)


def _chase(own, vel, targets):
    return np.array([_pursuit_action(own[k], vel[k], targets[k]) for k in range(3)])


def _heading(prey_vel):
    speed = float(np.linalg.norm(prey_vel))
    if speed < 1e-6:
        return np.array([1.0, 0.0])
    return prey_vel / speed


def _flank_targets(prey_pos, prey_vel):
    h = _heading(prey_vel)
    perp = np.array([-h[1], h[0]])
    return (_clip_target(prey_pos + _FLANK * perp),
            _clip_target(prey_pos - _FLANK * perp))


def _all_direct(obs, rng):
    own, vel, prey, _ = _decode(obs)
    return _chase(own, vel, [prey, prey, prey])


def _pincer(obs, rng):
    own, vel, prey, pvel = _decode(obs)
    left, right = _flank_targets(prey, pvel)
    return _chase(own, vel, [prey, left, right])


def _lead_intercept(obs, rng):
    own, vel, prey, pvel = _decode(obs)
    lead = _clip_target(prey + 0.5 * pvel)
    return _chase(own, vel, [lead, lead, lead])


def _chaser_blockers(obs, rng):
    own, vel, prey, _ = _decode(obs)
    order = sorted(range(4), key=lambda i: (float(np.linalg.norm(_CORNERS[i] - prey)), i))
    return _chase(own, vel, [prey, _CORNERS[order[0]], _CORNERS[order[1]]])


def _spread_patrol(obs, rng):
    own, vel, prey, _ = _decode(obs)
    targets = [prey if np.linalg.norm(prey - own[k]) < 0.5 else _ANCHORS[k]
               for k in range(3)]
    return _chase(own, vel, targets)


def _lazy_pursuit(obs, rng):
    own, vel, prey, _ = _decode(obs)
    return np.array([STAY if rng.random() < 0.5
                     else _pursuit_action(own[k], vel[k], prey) for k in range(3)])


def _random_team(obs, rng):
    return rng.integers(0, N_ACTIONS, size=3)


def _obstacle_hugger(obs, rng):
    own, vel, prey, _ = _decode(obs)
    # obstacle centers recovered from predator 0's relative view
    obst = own[0] + obs[0, 12:16].reshape(2, 2)
    near = obst[int(np.argmin(np.linalg.norm(obst - prey, axis=1)))]
    away = prey - near
    u = away / np.linalg.norm(away) if np.linalg.norm(away) > 1e-9 else np.array([1.0, 0.0])
    hug = _clip_target(near + 0.3 * u)
    targets = [prey if np.linalg.norm(prey - own[k]) < 0.4 else hug for k in range(3)]
    return _chase(own, vel, targets)


def _prey_mirroring(obs, rng):
    own, vel, prey, pvel = _decode(obs)
    if float(np.linalg.norm(pvel)) < 1e-6:
        return np.full(3, STAY)
    dots = ACTION_VEC[:4] @ pvel
    return np.full(3, int(np.argmax(dots)))


def _rotating_roles(obs, rng):
    own, vel, prey, pvel = _decode(obs)
    order = sorted(range(3), key=lambda k: (float(np.linalg.norm(prey - own[k])), k))
    left, right = _flank_targets(prey, pvel)
    targets = [None] * 3
    targets[order[0]], targets[order[1]], targets[order[2]] = prey, left, right
    return _chase(own, vel, targets)


def pp_policy_set():
    """The fixed ten-policy set for the predator team."""
    return PolicySet((
        FixedPolicy("all-direct-pursuit", _all_direct),
        FixedPolicy("pincer", _pincer),
        FixedPolicy("lead-intercept", _lead_intercept),
        FixedPolicy("one-chaser-two-blockers", _chaser_blockers),
        FixedPolicy("spread-patrol", _spread_patrol),
        FixedPolicy("lazy-pursuit", _lazy_pursuit),
        FixedPolicy("random", _random_team),
        FixedPolicy("obstacle-hugger", _obstacle_hugger),
        FixedPolicy("prey-mirroring", _prey_mirroring),
        FixedPolicy("rotating-roles", _rotating_roles),
    ))
