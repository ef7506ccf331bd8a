"""Finite Markov games, offline datasets, MLE estimation, and the
strict-dominance decision procedure.

States and per-player actions are dense 0-based indices.  Joint actions are
addressed both as tuples and as a single mixed-radix index (player 0 most
significant) so that reward/transition tables are flat in their last axis.
All containers are immutable value objects; every operation is a pure
function of its inputs.
"""

from __future__ import annotations

import itertools
import json
import math
import os
import tempfile
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .errors import UncoveredCell

#: Tolerance on the dominance margin used by the equilibrium decision.
MARGIN_TOL = 1e-9

#: Tolerance on probability normalization.
PROB_TOL = 1e-9


@dataclass(frozen=True)
class GameShape:
    """Dimensions of a finite n-player Markov game."""

    n_players: int
    n_states: int
    actions_per_player: tuple[int, ...]
    horizon: int

    def __post_init__(self):
        object.__setattr__(self, "actions_per_player", tuple(int(a) for a in self.actions_per_player))
        if self.n_players < 1 or self.n_states < 1 or self.horizon < 1:
            raise ValueError("all shape counts must be >= 1")
        if len(self.actions_per_player) != self.n_players:
            raise ValueError("actions_per_player length must equal n_players")
        if any(a < 1 for a in self.actions_per_player):
            raise ValueError("every player needs at least one action")

    @cached_property
    def n_joint_actions(self) -> int:
        return int(np.prod(self.actions_per_player))

    @cached_property
    def _radix_weights(self) -> tuple[int, ...]:
        # weight of player i's digit in the mixed-radix joint index
        weights = [1] * self.n_players
        for i in range(self.n_players - 2, -1, -1):
            weights[i] = weights[i + 1] * self.actions_per_player[i + 1]
        return tuple(weights)

    @cached_property
    def joint_action_tuples(self) -> tuple[tuple[int, ...], ...]:
        return tuple(itertools.product(*(range(a) for a in self.actions_per_player)))

    def joint_index(self, actions) -> int:
        idx = 0
        for a, w in zip(actions, self._radix_weights):
            idx += int(a) * w
        return idx

    def joint_tuple(self, index: int) -> tuple[int, ...]:
        return self.joint_action_tuples[index]

    def n_others(self, player: int) -> int:
        return self.n_joint_actions // self.actions_per_player[player]

    def other_tuples(self, player: int) -> tuple[tuple[int, ...], ...]:
        """Joint actions of everyone except `player`, ascending player order."""
        spaces = [range(a) for j, a in enumerate(self.actions_per_player) if j != player]
        return tuple(itertools.product(*spaces))

    @cached_property
    def _compose_maps(self) -> tuple[np.ndarray, ...]:
        # _compose_maps[i][a_i, o] = joint index of (a_i, o-th opponent profile)
        maps = []
        for i in range(self.n_players):
            others = self.other_tuples(i)
            table = np.empty((self.actions_per_player[i], len(others)), dtype=np.int64)
            for ai in range(self.actions_per_player[i]):
                for o, rest in enumerate(others):
                    full = rest[:i] + (ai,) + rest[i:]
                    table[ai, o] = self.joint_index(full)
            maps.append(table)
        return tuple(maps)

    def compose(self, player: int, own_action: int, others_index: int) -> int:
        return int(self._compose_maps[player][own_action, others_index])

    @cached_property
    def _decompose_maps(self) -> tuple[tuple[np.ndarray, np.ndarray], ...]:
        # inverse of _compose_maps: joint index -> (own action, opponent profile index)
        out = []
        for i in range(self.n_players):
            own = np.empty(self.n_joint_actions, dtype=np.int64)
            oth = np.empty(self.n_joint_actions, dtype=np.int64)
            table = self._compose_maps[i]
            for ai in range(table.shape[0]):
                for o in range(table.shape[1]):
                    own[table[ai, o]] = ai
                    oth[table[ai, o]] = o
            out.append((own, oth))
        return tuple(out)

    def own_action_of(self, player: int) -> np.ndarray:
        return self._decompose_maps[player][0]

    def others_index_of(self, player: int) -> np.ndarray:
        return self._decompose_maps[player][1]

    @property
    def n_deterministic_policies(self) -> int:
        return self.n_joint_actions ** (self.horizon * self.n_states)


@dataclass(frozen=True)
class JointPolicy:
    """Deterministic Markovian joint policy: (period, state) -> joint action."""

    shape: GameShape
    actions: np.ndarray  # (H, S, n) int

    def __post_init__(self):
        acts = np.asarray(self.actions, dtype=np.int64)
        object.__setattr__(self, "actions", acts)
        H, S, n = self.shape.horizon, self.shape.n_states, self.shape.n_players
        if acts.shape != (H, S, n):
            raise ValueError(f"policy table must have shape {(H, S, n)}, got {acts.shape}")
        caps = np.asarray(self.shape.actions_per_player)
        if (acts < 0).any() or (acts >= caps[None, None, :]).any():
            raise ValueError("policy contains an out-of-range action")
        acts.setflags(write=False)

    @cached_property
    def joint_indices(self) -> np.ndarray:
        """(H, S) table of mixed-radix joint-action indices."""
        H, S = self.shape.horizon, self.shape.n_states
        out = np.empty((H, S), dtype=np.int64)
        for h in range(H):
            for s in range(S):
                out[h, s] = self.shape.joint_index(self.actions[h, s])
        out.setflags(write=False)
        return out

    @staticmethod
    def constant(shape: GameShape, joint_action) -> "JointPolicy":
        """Policy playing the same joint action at every period and state."""
        acts = np.tile(np.asarray(joint_action, dtype=np.int64), (shape.horizon, shape.n_states, 1))
        return JointPolicy(shape, acts)


def enumerate_policies(shape: GameShape):
    """Yield every deterministic Markovian joint policy (small shapes only)."""
    H, S = shape.horizon, shape.n_states
    cells = [(h, s) for h in range(H) for s in range(S)]
    for assignment in itertools.product(range(shape.n_joint_actions), repeat=len(cells)):
        acts = np.empty((H, S, shape.n_players), dtype=np.int64)
        for (h, s), j in zip(cells, assignment):
            acts[h, s] = shape.joint_tuple(j)
        yield JointPolicy(shape, acts)


@dataclass(frozen=True)
class MarkovGame:
    """A finite-horizon general-sum Markov game with bounded rewards.

    `transitions[h, s, a, s']` is the probability of moving to s' after joint
    action a in state s at period h; the final period has no transition table
    (episodes end there and no operation reads it).
    """

    shape: GameShape
    rewards: np.ndarray       # (n, H, S, J)
    transitions: np.ndarray   # (H-1, S, J, S)
    initial_dist: np.ndarray  # (S,)
    bound: float = math.inf

    def __post_init__(self):
        n, H, S, J = (self.shape.n_players, self.shape.horizon,
                      self.shape.n_states, self.shape.n_joint_actions)
        r = np.asarray(self.rewards, dtype=np.float64)
        p = np.asarray(self.transitions, dtype=np.float64)
        mu = np.asarray(self.initial_dist, dtype=np.float64)
        if r.shape != (n, H, S, J):
            raise ValueError(f"rewards must have shape {(n, H, S, J)}, got {r.shape}")
        if p.shape != (max(H - 1, 0), S, J, S):
            raise ValueError(f"transitions must have shape {(H - 1, S, J, S)}, got {p.shape}")
        if mu.shape != (S,):
            raise ValueError(f"initial_dist must have shape {(S,)}")
        if not self.bound > 0:
            raise ValueError("reward bound must be positive")
        if np.isfinite(self.bound) and np.abs(r).max(initial=0.0) > self.bound + PROB_TOL:
            raise ValueError("a reward entry exceeds the bound")
        if p.size and ((p < -PROB_TOL).any() or np.abs(p.sum(axis=-1) - 1.0).max() > PROB_TOL):
            raise ValueError("each transition row must be a probability distribution")
        if (mu < -PROB_TOL).any() or abs(mu.sum() - 1.0) > PROB_TOL:
            raise ValueError("initial_dist must be a probability distribution")
        for arr in (r, p, mu):
            arr.setflags(write=False)
        object.__setattr__(self, "rewards", r)
        object.__setattr__(self, "transitions", p)
        object.__setattr__(self, "initial_dist", mu)


@dataclass(frozen=True)
class OfflineDataset:
    """K recorded episodes of length H: states, joint actions, reward vectors."""

    shape: GameShape
    states: np.ndarray   # (K, H) int
    actions: np.ndarray  # (K, H, n) int
    rewards: np.ndarray  # (K, H, n) float

    def __post_init__(self):
        st = np.asarray(self.states, dtype=np.int64)
        ac = np.asarray(self.actions, dtype=np.int64)
        rw = np.asarray(self.rewards, dtype=np.float64)
        H, n = self.shape.horizon, self.shape.n_players
        if st.ndim != 2 or st.shape[1] != H:
            raise ValueError(f"states must be (K, {H})")
        K = st.shape[0]
        if ac.shape != (K, H, n) or rw.shape != (K, H, n):
            raise ValueError("actions/rewards must be (K, H, n)")
        if (st < 0).any() or (st >= self.shape.n_states).any():
            raise ValueError("state index out of range")
        caps = np.asarray(self.shape.actions_per_player)
        if (ac < 0).any() or (ac >= caps[None, None, :]).any():
            raise ValueError("action index out of range")
        for arr in (st, ac, rw):
            arr.setflags(write=False)
        object.__setattr__(self, "states", st)
        object.__setattr__(self, "actions", ac)
        object.__setattr__(self, "rewards", rw)

    @property
    def n_episodes(self) -> int:
        return self.states.shape[0]

    @cached_property
    def joint_action_indices(self) -> np.ndarray:
        """(K, H) mixed-radix joint-action index per step."""
        weights = np.asarray(self.shape._radix_weights, dtype=np.int64)
        out = self.actions @ weights
        out.setflags(write=False)
        return out

    def replace_rewards(self, rewards: np.ndarray) -> "OfflineDataset":
        return OfflineDataset(self.shape, self.states, self.actions, rewards)


@dataclass(frozen=True)
class VisitCounts:
    """Per-cell visit tallies N_h(s, a) with their per-period and global extremes."""

    shape: GameShape
    counts: np.ndarray  # (H, S, J) int

    def __post_init__(self):
        c = np.asarray(self.counts, dtype=np.int64)
        H, S, J = self.shape.horizon, self.shape.n_states, self.shape.n_joint_actions
        if c.shape != (H, S, J):
            raise ValueError(f"counts must be {(H, S, J)}")
        if (c < 0).any():
            raise ValueError("counts must be nonnegative")
        totals = c.reshape(H, -1).sum(axis=1)
        if len(set(totals.tolist())) > 1:
            raise ValueError("every period must tally the same number of episodes")
        c.setflags(write=False)
        object.__setattr__(self, "counts", c)

    @cached_property
    def min_per_period(self) -> np.ndarray:
        return self.counts.reshape(self.shape.horizon, -1).min(axis=1)

    @cached_property
    def max_per_period(self) -> np.ndarray:
        return self.counts.reshape(self.shape.horizon, -1).max(axis=1)

    @property
    def n_min(self) -> int:
        return int(self.min_per_period.min())

    @property
    def n_max(self) -> int:
        return int(self.max_per_period.max())


@dataclass(frozen=True)
class QTables:
    """Action values Q_{i,h}(s, a) and state values V_{i,h}(s) under one policy."""

    q: np.ndarray  # (n, H, S, J)
    v: np.ndarray  # (n, H, S)


@dataclass(frozen=True)
class CoverageReport:
    satisfied: bool
    uncovered: tuple  # of (h, s, joint-action tuple)


@dataclass(frozen=True)
class MpdseDecision:
    """Outcome of the strict-dominance test.

    `worst_margin` is the minimum over all (player, period, state, deviation,
    opponent profile) of Q(target) - Q(deviation) - iota; +inf when no player
    has an alternative action.
    """

    is_equilibrium: bool
    worst_margin: float


def visit_counts(dataset: OfflineDataset) -> VisitCounts:
    """Tally N_h(s, a) over the dataset."""
    shape = dataset.shape
    H, S, J = shape.horizon, shape.n_states, shape.n_joint_actions
    counts = np.zeros((H, S, J), dtype=np.int64)
    cells = dataset.joint_action_indices
    for h in range(H):
        np.add.at(counts[h], (dataset.states[:, h], cells[:, h]), 1)
    return VisitCounts(shape, counts)


def check_full_coverage(counts: VisitCounts) -> CoverageReport:
    """Report whether every (period, state, joint action) cell was visited."""
    zeros = np.argwhere(counts.counts == 0)
    uncovered = tuple(
        (int(h), int(s), counts.shape.joint_tuple(int(j))) for h, s, j in zeros
    )
    return CoverageReport(satisfied=len(uncovered) == 0, uncovered=uncovered)


def mle_game(dataset: OfflineDataset, bound: float = math.inf):
    """Empirical means of rewards and next-state frequencies.

    Returns `(rewards, transitions)` with shapes (n, H, S, J) and
    (H-1, S, J, S).  Raises UncoveredCell when any cell has no visits: with
    missing cells a learner may assume arbitrary defaults the attacker cannot
    influence, so no estimate is produced.
    """
    shape = dataset.shape
    counts = visit_counts(dataset)
    report = check_full_coverage(counts)
    if not report.satisfied:
        raise UncoveredCell(report.uncovered)

    n, H, S, J = shape.n_players, shape.horizon, shape.n_states, shape.n_joint_actions
    cells = dataset.joint_action_indices
    reward_sum = np.zeros((n, H, S, J))
    for h in range(H):
        for i in range(n):
            np.add.at(reward_sum[i, h], (dataset.states[:, h], cells[:, h]),
                      dataset.rewards[:, h, i])
    rewards = reward_sum / counts.counts[None, :, :, :]

    transitions = np.zeros((H - 1, S, J, S))
    for h in range(H - 1):
        np.add.at(transitions[h],
                  (dataset.states[:, h], cells[:, h], dataset.states[:, h + 1]), 1.0)
        transitions[h] /= counts.counts[h][:, :, None]
    if np.isfinite(bound):
        # means of in-bound rewards stay in bound; clamp float dust only
        rewards = np.clip(rewards, -bound, bound)
    return rewards, transitions


def empirical_initial_dist(dataset: OfflineDataset) -> np.ndarray:
    mu = np.bincount(dataset.states[:, 0], minlength=dataset.shape.n_states).astype(float)
    return mu / mu.sum()


def mle_markov_game(dataset: OfflineDataset, bound: float = math.inf) -> MarkovGame:
    """The maximum-likelihood Markov game induced by the dataset."""
    rewards, transitions = mle_game(dataset, bound)
    return MarkovGame(dataset.shape, rewards, transitions,
                      empirical_initial_dist(dataset), bound)


def q_values(game: MarkovGame, policy: JointPolicy) -> QTables:
    """Exact backward induction of Q and V under a fixed joint policy."""
    shape = game.shape
    n, H, S, J = shape.n_players, shape.horizon, shape.n_states, shape.n_joint_actions
    q = np.zeros((n, H, S, J))
    v = np.zeros((n, H, S))
    pol = policy.joint_indices
    for h in range(H - 1, -1, -1):
        q[:, h] = game.rewards[:, h]
        if h < H - 1:
            q[:, h] += np.einsum("sjt,nt->nsj", game.transitions[h], v[:, h + 1])
        for s in range(S):
            v[:, h, s] = q[:, h, s, pol[h, s]]
    return QTables(q=q, v=v)


def is_iota_mpdse(game: MarkovGame, policy: JointPolicy, iota: float) -> MpdseDecision:
    """Decide whether `policy` is an iota-strict dominant-strategy equilibrium.

    The candidate dominates when, at every period and state, each player's
    prescribed action beats every alternative by at least `iota` against every
    opponent profile, with Q computed under the candidate policy itself.
    Comparisons tolerate MARGIN_TOL of float slack; the reported worst margin
    is exact so callers can assert sharper values.
    """
    if iota < 0:
        raise ValueError("iota must be nonnegative")
    shape = game.shape
    tables = q_values(game, policy)
    worst = math.inf
    for i in range(shape.n_players):
        if shape.actions_per_player[i] < 2:
            continue
        own = shape.own_action_of(i)
        oth = shape.others_index_of(i)
        compose = shape._compose_maps[i]
        for h in range(shape.horizon):
            for s in range(shape.n_states):
                target = policy.actions[h, s, i]
                row = tables.q[i, h, s]
                margins = row[compose[target][oth]] - row - iota
                deviations = own != target
                if deviations.any():
                    worst = min(worst, float(margins[deviations].min()))
    return MpdseDecision(is_equilibrium=worst >= -MARGIN_TOL, worst_margin=worst)


# ---------------------------------------------------------------------------
# Dataset interchange format: JSON-Lines episodes plus a JSON shape header.
# ---------------------------------------------------------------------------

def _atomic_write(path: str, text: str) -> None:
    directory = os.path.dirname(os.path.abspath(path)) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_dataset(dataset: OfflineDataset, data_path: str, header_path: str,
                 bound: float = math.inf) -> None:
    """Write episodes as JSON Lines and the shape header as a JSON sidecar.

    An infinite reward bound is stored as null.
    """
    header = {
        "n": dataset.shape.n_players,
        "n_states": dataset.shape.n_states,
        "actions": list(dataset.shape.actions_per_player),
        "H": dataset.shape.horizon,
        "b": None if math.isinf(bound) else float(bound),
    }
    _atomic_write(header_path, json.dumps(header, indent=2) + "\n")
    lines = []
    for k in range(dataset.n_episodes):
        steps = [
            {
                "s": int(dataset.states[k, h]),
                "a": [int(a) for a in dataset.actions[k, h]],
                "r": [float(r) for r in dataset.rewards[k, h]],
            }
            for h in range(dataset.shape.horizon)
        ]
        lines.append(json.dumps({"steps": steps}))
    _atomic_write(data_path, "\n".join(lines) + "\n")


def load_dataset(data_path: str, header_path: str) -> tuple[OfflineDataset, float]:
    """Read a dataset written by :func:`save_dataset`; returns (dataset, bound)."""
    with open(header_path) as fh:
        header = json.load(fh)
    shape = GameShape(
        n_players=int(header["n"]),
        n_states=int(header["n_states"]),
        actions_per_player=tuple(int(a) for a in header["actions"]),
        horizon=int(header["H"]),
    )
    bound = math.inf if header.get("b") is None else float(header["b"])
    states, actions, rewards = [], [], []
    with open(data_path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            episode = json.loads(line)["steps"]
            if len(episode) != shape.horizon:
                raise ValueError("episode length does not match the header horizon")
            states.append([step["s"] for step in episode])
            actions.append([step["a"] for step in episode])
            rewards.append([step["r"] for step in episode])
    dataset = OfflineDataset(
        shape,
        np.asarray(states, dtype=np.int64),
        np.asarray(actions, dtype=np.int64),
        np.asarray(rewards, dtype=np.float64),
    )
    return dataset, bound
