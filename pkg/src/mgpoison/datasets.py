"""Named dataset generators for experiments and the command line."""

from __future__ import annotations

import numpy as np

from .confidence import make_rng
from .game import GameShape, OfflineDataset

#: The 2x2 stage game whose all-(first-action) profile is already dominant:
#: payoffs[(a1, a2)] = (r1, r2).
SECTION3_PAYOFFS = {
    (0, 0): (3.0, 3.0),
    (0, 1): (1.0, 2.0),
    (1, 0): (2.0, 1.0),
    (1, 1): (0.0, 0.0),
}

#: Cell counts that invert both players' marginal action means, making any
#: per-learner attack pay while the joint attack is free.
SKEWED_COUNTS = {(0, 0): 1, (0, 1): 9, (1, 0): 9, (1, 1): 1}


def demo_game_dataset(n_per_cell: int = 5, bound: float = 3.0,
                      counts: dict | None = None) -> OfflineDataset:
    """Single-state, single-period dataset whose means equal the 2x2 demo
    payoffs exactly (rewards are deterministic per cell)."""
    shape = GameShape(2, 1, (2, 2), 1)
    cell_counts = counts or {k: n_per_cell for k in SECTION3_PAYOFFS}
    states, actions, rewards = [], [], []
    for joint, payoff in SECTION3_PAYOFFS.items():
        for _ in range(int(cell_counts[joint])):
            states.append([0])
            actions.append([list(joint)])
            rewards.append([list(payoff)])
    if bound < max(abs(r) for p in SECTION3_PAYOFFS.values() for r in p):
        raise ValueError("bound must cover the demo payoffs")
    return OfflineDataset(shape, np.asarray(states), np.asarray(actions),
                          np.asarray(rewards, dtype=float))


def random_dataset(n_players: int, n_actions: int, n_states: int, horizon: int,
                   n_episodes: int, bound: float, seed: int) -> OfflineDataset:
    """Uniformly random episodes with guaranteed full coverage.

    Cells are scheduled round-robin per period (so coverage holds whenever
    n_episodes >= n_states * n_actions**n_players) and then shuffled; rewards
    are uniform in [-bound, bound].
    """
    shape = GameShape(n_players, n_states, (n_actions,) * n_players, horizon)
    C = shape.n_states * shape.n_joint_actions
    if n_episodes < C:
        raise ValueError(f"need at least {C} episodes for full coverage")
    rng = make_rng(seed)
    states = np.empty((n_episodes, horizon), dtype=np.int64)
    actions = np.empty((n_episodes, horizon, n_players), dtype=np.int64)
    base = np.arange(n_episodes) % C
    for h in range(horizon):
        cells = base.copy()
        rng.shuffle(cells)
        states[:, h] = cells // shape.n_joint_actions
        local = cells % shape.n_joint_actions
        for k in range(n_episodes):
            actions[k, h] = shape.joint_tuple(int(local[k]))
    rewards = rng.uniform(-bound, bound, size=(n_episodes, horizon, n_players))
    return OfflineDataset(shape, states, actions, rewards)
