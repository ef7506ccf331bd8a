"""Shared builders for the test suite."""

from __future__ import annotations

import numpy as np
import pytest

from mgpoison.confidence import constant_widths, make_rng
from mgpoison.datasets import SECTION3_PAYOFFS, SKEWED_COUNTS, demo_game_dataset
from mgpoison.game import GameShape, JointPolicy, OfflineDataset


def bandit_dataset(payoffs: dict, counts: dict) -> OfflineDataset:
    """Single-cell-per-episode bandit dataset with deterministic rewards."""
    n = len(next(iter(payoffs)))
    caps = tuple(max(k[i] for k in payoffs) + 1 for i in range(n))
    shape = GameShape(n, 1, caps, 1)
    states, actions, rewards = [], [], []
    for joint, payoff in payoffs.items():
        for _ in range(counts[joint]):
            states.append([0])
            actions.append([list(joint)])
            rewards.append([list(payoff)])
    return OfflineDataset(shape, np.asarray(states), np.asarray(actions),
                          np.asarray(rewards, dtype=float))


def scheduled_dataset(shape: GameShape, n_per_cell: int, bound: float,
                      rng: np.random.Generator) -> OfflineDataset:
    """Every (period, state, joint action) cell visited exactly n_per_cell
    times, with uniform random rewards."""
    S, J, H = shape.n_states, shape.n_joint_actions, shape.horizon
    C = S * J
    K = n_per_cell * C
    states = np.empty((K, H), dtype=np.int64)
    actions = np.empty((K, H, shape.n_players), dtype=np.int64)
    base = np.arange(K) % C
    for h in range(H):
        cells = base.copy()
        rng.shuffle(cells)
        states[:, h] = cells // J
        for k in range(K):
            actions[k, h] = shape.joint_tuple(int(cells[k] % J))
    rewards = rng.uniform(-bound, bound, size=(K, H, shape.n_players))
    return OfflineDataset(shape, states, actions, rewards)


def random_bandit_instance(rng: np.random.Generator, *, max_players=3,
                           max_actions=3, max_extra=30, bound=1.0,
                           iota=None, rho=None):
    """A feasible random bandit attack instance with modest sizes."""
    from mgpoison.bandit import BanditAttackInstance

    n = int(rng.integers(2, max_players + 1))
    A = int(rng.integers(2, max_actions + 1))
    shape = GameShape(n, 1, (A,) * n, 1)
    J = shape.n_joint_actions
    base = int(rng.integers(1, 3))
    counts = {shape.joint_tuple(a): base + int(rng.integers(0, 3)) for a in range(J)}
    while sum(counts.values()) > J * base + max_extra:
        counts = {shape.joint_tuple(a): base for a in range(J)}
    payoffs = {shape.joint_tuple(a): tuple(rng.uniform(-bound, bound, size=n))
               for a in range(J)}
    dataset = bandit_dataset(payoffs, counts)
    if rho is None:
        rho = float(rng.uniform(0.0, 0.15))
    if iota is None:
        iota = float(rng.uniform(0.01, 2 * bound - 2 * rho - 0.05))
    target = tuple(int(x) for x in rng.integers(0, A, size=n))
    return BanditAttackInstance(dataset, target, constant_widths(shape, rho),
                                iota, bound)


@pytest.fixture
def section3():
    """Balanced demo dataset plus its standard attack parameters."""
    dataset = demo_game_dataset(n_per_cell=5)
    widths = constant_widths(dataset.shape, 0.1)
    return dataset, widths


@pytest.fixture
def rng():
    return make_rng(20240817)
