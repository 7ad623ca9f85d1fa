"""Ten scripted controllers for the modeled forager.

Each policy decodes the flat observation back to grid entities and emits one
action.  Movement is greedy Manhattan with a fixed tie preference (up, down,
left, right), stepping around live apples and the teammate; a policy loads
whenever its rule says the adjacent apple is worth loading.
"""

from __future__ import annotations

import numpy as np

from .base import FixedPolicy, PolicySet
from .lbf import DOWN, LEFT, LOAD, MOVE_VEC, N_ACTIONS, NOOP, RIGHT, UP, decode_obs


def _manhattan(a, b):
    return abs(a[0] - b[0]) + abs(a[1] - b[1])


def _step_toward(me, target, blocked, rows, cols):
    """First move in preference order that strictly shrinks the Manhattan
    distance; noop when stuck."""
    best, best_d = NOOP, _manhattan(me, target)
    for a in (UP, DOWN, LEFT, RIGHT):
        nxt = (me[0] + MOVE_VEC[a][0], me[1] + MOVE_VEC[a][1])
        if not (0 <= nxt[0] < rows and 0 <= nxt[1] < cols) or nxt in blocked:
            continue
        d = _manhattan(nxt, target)
        if d < best_d:
            best, best_d = a, d
    return best


def _live_apples(apples):
    return [(pos, lvl, j) for j, (pos, lvl, got) in enumerate(apples) if not got]


def _adjacent_to_live(me, live):
    return any(_manhattan(me, pos) == 1 for pos, _, _ in live)


def _fetch_policy(pid, choose, rows, cols, n_apples):
    """Template: pick a target apple, walk to it, load when adjacent."""

    def act(obs, rng):
        me, lvl, other, apples = decode_obs(obs, rows, cols, n_apples)
        live = _live_apples(apples)
        if not live:
            return NOOP
        target = choose(me, lvl, live)
        if _manhattan(me, target) == 1:
            return LOAD
        blocked = {pos for pos, _, _ in live} | {other}
        return _step_toward(me, target, blocked, rows, cols)

    return FixedPolicy(pid, act)


def _nearest(me, lvl, live):
    return min(live, key=lambda t: (_manhattan(me, t[0]), t[2]))[0]


def _farthest(me, lvl, live):
    return min(live, key=lambda t: (-_manhattan(me, t[0]), t[2]))[0]


def _highest_level(me, lvl, live):
    return min(live, key=lambda t: (-t[1], _manhattan(me, t[0]), t[2]))[0]


def _needs_help(me, lvl, live):
    # camp at an apple above my own level and keep loading until the
    # teammate joins in; fall back to plain nearest when none is left
    heavy = [t for t in live if t[1] > lvl]
    return _nearest(me, lvl, heavy if heavy else live)


def _row_sweep_action(r, c, rows, cols):
    """Closed boustrophedon over the grid; column 0 is the return lane.
    Assumes an even number of rows."""
    if c == 0:
        return UP if r > 0 else RIGHT
    if r % 2 == 0:
        return RIGHT if c < cols - 1 else DOWN
    if r == rows - 1:
        return LEFT
    return LEFT if c > 1 else DOWN


_TRANSPOSE = {UP: LEFT, DOWN: RIGHT, LEFT: UP, RIGHT: DOWN, NOOP: NOOP}


def _sweep_policy(pid, by_columns, rows, cols, n_apples):
    def act(obs, rng):
        me, lvl, other, apples = decode_obs(obs, rows, cols, n_apples)
        live = _live_apples(apples)
        if _adjacent_to_live(me, live):
            return LOAD
        if by_columns:
            return _TRANSPOSE[_row_sweep_action(me[1], me[0], cols, rows)]
        return _row_sweep_action(me[0], me[1], rows, cols)

    return FixedPolicy(pid, act)


def _perimeter_policy(pid, rows, cols, n_apples):
    def act(obs, rng):
        me, lvl, other, apples = decode_obs(obs, rows, cols, n_apples)
        live = _live_apples(apples)
        if _adjacent_to_live(me, live):
            return LOAD
        r, c = me
        if r == 0 and c < cols - 1:
            return RIGHT
        if c == cols - 1 and r < rows - 1:
            return DOWN
        if r == rows - 1 and c > 0:
            return LEFT
        if c == 0 and r > 0:
            return UP
        # interior: head for the nearest edge cell
        edges = [(r, UP), (rows - 1 - r, DOWN), (c, LEFT), (cols - 1 - c, RIGHT)]
        return min(edges)[1]

    return FixedPolicy(pid, act)


def _follower_policy(pid, rows, cols, n_apples):
    def act(obs, rng):
        me, lvl, other, apples = decode_obs(obs, rows, cols, n_apples)
        live = _live_apples(apples)
        if _adjacent_to_live(me, live):
            return LOAD
        if _manhattan(me, other) <= 1:
            return NOOP
        blocked = {pos for pos, _, _ in live}
        return _step_toward(me, other, blocked, rows, cols)

    return FixedPolicy(pid, act)


def _lazy_act(obs, rng):
    if rng.random() < 0.5:
        return NOOP
    return int(rng.integers(1, N_ACTIONS))


def _random_act(obs, rng):
    return int(rng.integers(N_ACTIONS))


def lbf_policy_set(rows=8, cols=8, n_apples=4):
    """The fixed ten-policy set for level-based foraging."""
    return PolicySet((
        _fetch_policy("nearest-apple", _nearest, rows, cols, n_apples),
        _fetch_policy("highest-level-first", _highest_level, rows, cols, n_apples),
        _sweep_policy("row-sweep", False, rows, cols, n_apples),
        _sweep_policy("column-sweep", True, rows, cols, n_apples),
        _fetch_policy("cooperative-waiter", _needs_help, rows, cols, n_apples),
        _follower_policy("follower", rows, cols, n_apples),
        FixedPolicy("lazy", _lazy_act),
        FixedPolicy("random", _random_act),
        _perimeter_policy("perimeter-patrol", rows, cols, n_apples),
        _fetch_policy("farthest-apple", _farthest, rows, cols, n_apples),
    ))
