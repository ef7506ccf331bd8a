"""Simulated offline learners: value iteration with an uncertainty bonus.

Each learner backs an empirical action-value estimate through the horizon,
shifts it by a signed bonus (positive = pessimism, negative = optimism), and
plays a per-state equilibrium of the shifted stage games.  A successful
poisoning must steer every such learner, whatever its bonus, into the target
policy; the compatibility witness below makes that argument executable by
exhibiting a plausible game whose exact values reproduce the learner's
shifted estimates.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .confidence import ConfidenceWidths
from .errors import NoEquilibrium
from .game import (GameShape, JointPolicy, MarkovGame, OfflineDataset,
                   empirical_initial_dist, mle_game, visit_counts, VisitCounts)

BONUS_KINDS = ("pessimistic", "optimistic", "zero", "custom")


@dataclass(frozen=True)
class BonusSpec:
    """Bonus magnitude rule.  `custom` carries an explicit signed table;
    the count-based kinds derive |Gamma| = H * sqrt(beta / (N + 1))."""

    kind: str
    delta: Optional[float] = None
    c: float = 1.0
    table: Optional[np.ndarray] = None  # (H, S, J) or (n, H, S, J), signed

    def __post_init__(self):
        if self.kind not in BONUS_KINDS:
            raise ValueError(f"unknown bonus kind {self.kind!r}")
        if self.kind == "custom" and self.table is None:
            raise ValueError("custom bonus needs a table")
        if self.kind in ("pessimistic", "optimistic") and self.delta is None:
            raise ValueError(f"{self.kind} bonus needs a confidence level")


def bonus_gamma(counts: VisitCounts, kind: str, horizon: int, delta: float,
                c: float = 1.0) -> np.ndarray:
    """Signed bonus table H*sqrt(beta/(N+1)), beta = c*log(|S||A|H*N/delta)."""
    if kind not in ("pessimistic", "optimistic", "zero"):
        raise ValueError(f"no closed form for bonus kind {kind!r}")
    if kind == "zero":
        return np.zeros_like(counts.counts, dtype=float)
    shape = counts.shape
    n_total = int(counts.counts.sum())
    beta = c * math.log(shape.n_states * shape.n_joint_actions * horizon
                        * max(n_total, 2) / delta)
    magnitude = horizon * np.sqrt(beta / (counts.counts + 1.0))
    return magnitude if kind == "pessimistic" else -magnitude


def _resolve_gamma(dataset: OfflineDataset, bonus: BonusSpec) -> np.ndarray:
    """(n, H, S, J) signed bonus per learner."""
    shape = dataset.shape
    if bonus.kind == "custom":
        table = np.asarray(bonus.table, dtype=float)
    else:
        table = bonus_gamma(visit_counts(dataset), bonus.kind, shape.horizon,
                            bonus.delta if bonus.delta is not None else 0.05, bonus.c)
    if table.ndim == 3:
        table = np.broadcast_to(table, (shape.n_players,) + table.shape)
    if not np.isfinite(table).all():
        raise ValueError("bonus table must be finite")
    return table


@dataclass(frozen=True)
class NeResult:
    joint: Optional[tuple[int, ...]]
    status: str  # "strict_dse" | "pure_ne" | "none_found"
    pure_equilibria: tuple


def ne_oracle(q_matrices: Sequence[np.ndarray]) -> NeResult:
    """Equilibrium of one stage game given each player's payoff tensor.

    Prefers the strict dominant-strategy profile when one exists; otherwise
    enumerates pure equilibria and returns the lexicographically first, with
    all of them listed for diagnostics.
    """
    n = len(q_matrices)
    dims = q_matrices[0].shape
    if any(q.shape != dims for q in q_matrices):
        raise ValueError("payoff tensors disagree on the action space")

    dominant: list[Optional[int]] = []
    for i, q in enumerate(q_matrices):
        mat = np.moveaxis(q, i, 0).reshape(dims[i], -1)
        choice = None
        for cand in range(dims[i]):
            others = [k for k in range(dims[i]) if k != cand]
            if all((mat[cand] > mat[k]).all() for k in others):
                choice = cand
                break
        dominant.append(choice)
    if all(c is not None for c in dominant):
        return NeResult(tuple(dominant), "strict_dse", (tuple(dominant),))

    equilibria = []
    for joint in np.ndindex(*dims):
        stable = True
        for i, q in enumerate(q_matrices):
            value = q[joint]
            for alt in range(dims[i]):
                other = joint[:i] + (alt,) + joint[i + 1:]
                if q[other] > value:
                    stable = False
                    break
            if not stable:
                break
        if stable:
            equilibria.append(tuple(int(x) for x in joint))
    if equilibria:
        return NeResult(equilibria[0], "pure_ne", tuple(equilibria))
    return NeResult(None, "none_found", ())


@dataclass(frozen=True)
class LearnerOutput:
    policy: JointPolicy
    q_lower: np.ndarray   # (n, H, S, J) bonus-shifted values
    v_lower: np.ndarray   # (n, H, S)
    ne_status: tuple      # (H, S) nested tuple of statuses
    gamma: np.ndarray     # (n, H, S, J) signed bonus actually used


def povi(dataset: OfflineDataset, bonus: BonusSpec,
         bound: float = math.inf) -> LearnerOutput:
    """Backward value iteration on the empirical model with a signed bonus.

    Raises NoEquilibrium when some shifted stage game has no pure
    equilibrium (post-attack games never do: the target is strictly
    dominant there).
    """
    shape = dataset.shape
    n, H, S, J = shape.n_players, shape.horizon, shape.n_states, shape.n_joint_actions
    r_hat, p_hat = mle_game(dataset, bound)
    gamma = _resolve_gamma(dataset, bonus)

    q_lower = np.zeros((n, H, S, J))
    v_lower = np.zeros((n, H, S))
    policy = np.zeros((H, S, n), dtype=np.int64)
    statuses = [[None] * S for _ in range(H)]
    dims = shape.actions_per_player
    for h in range(H - 1, -1, -1):
        q_tilde = r_hat[:, h].copy()
        if h < H - 1:
            q_tilde += np.einsum("sjt,nt->nsj", p_hat[h], v_lower[:, h + 1])
        q_lower[:, h] = q_tilde - gamma[:, h]
        for s in range(S):
            result = ne_oracle([q_lower[i, h, s].reshape(dims) for i in range(n)])
            if result.joint is None:
                raise NoEquilibrium(h, s)
            statuses[h][s] = result.status
            policy[h, s] = result.joint
            joint_idx = shape.joint_index(result.joint)
            v_lower[:, h, s] = q_lower[:, h, s, joint_idx]
    return LearnerOutput(
        policy=JointPolicy(shape, policy),
        q_lower=q_lower,
        v_lower=v_lower,
        ne_status=tuple(tuple(row) for row in statuses),
        gamma=gamma,
    )


def _inner_spread(v_next: np.ndarray, rho_p: float) -> float:
    """Max of <U, v> over zero-sum U with L1 norm at most rho_p."""
    return 0.5 * rho_p * float(v_next.max() - v_next.min())


def check_assumption_a1(gamma: np.ndarray, widths: ConfidenceWidths,
                        v_lower: np.ndarray) -> tuple[bool, np.ndarray]:
    """Bonus-vs-widths compatibility: |Gamma| must not exceed the reward
    width plus what a plausible transition tilt can add on the learner's
    continuation values.  Returns (ok, per-cell slack)."""
    if gamma.ndim == 3:
        gamma = gamma[None]
    n = v_lower.shape[0]
    if gamma.shape[0] == 1 and n > 1:
        gamma = np.broadcast_to(gamma, (n,) + gamma.shape[1:])
    _, H, S, J = gamma.shape
    slack = np.empty((n, H, S, J))
    rho_p = widths.rho_p
    for i in range(n):
        for h in range(H):
            for s in range(S):
                for a in range(J):
                    allowance = widths.rho_r[h, s, a]
                    if h < H - 1 and rho_p is not None:
                        allowance += _inner_spread(v_lower[i, h + 1], rho_p[h, s, a])
                    slack[i, h, s, a] = allowance - abs(gamma[i, h, s, a])
    return bool(slack.min() >= -1e-12), slack


def _shared_tilt(residuals: np.ndarray, v_next: np.ndarray, p_row: np.ndarray,
                 rho_p: float) -> np.ndarray:
    """One zero-sum tilt U with <U, v_i> = residual_i for every learner,
    ||U||_1 <= rho_p, and p_row - U still a distribution.

    The tilt is shared by all learners while the continuation values differ
    per learner, so the system may be unsolvable; raises ValueError then.
    """
    S = p_row.shape[0]
    system = np.vstack([v_next, np.ones((1, S))])
    rhs = np.concatenate([residuals, [0.0]])
    tilt, *_ = np.linalg.lstsq(system, rhs, rcond=None)
    if np.abs(system @ tilt - rhs).max() > 1e-9:
        raise ValueError("bonus cannot be realized by any plausible game")
    if np.abs(tilt).sum() > rho_p + 1e-9:
        raise ValueError("required tilt exceeds the transition width")
    if ((p_row - tilt) < -1e-12).any():
        raise ValueError("required tilt leaves the probability simplex")
    return tilt


def thm_witness_game(dataset: OfflineDataset, widths: ConfidenceWidths,
                     output: LearnerOutput, bound: float = math.inf
                     ) -> tuple[MarkovGame, float]:
    """Construct a plausible game whose exact values reproduce the learner's
    shifted estimates.

    Splits each cell's bonus into a reward part u (|u| <= rho^R, per learner)
    and a single shared transition tilt realized against the learners'
    continuation values; returns the game and the worst absolute residual of
    the reconstruction Q = R + <P, V_next>.
    """
    shape = dataset.shape
    n, H, S, J = shape.n_players, shape.horizon, shape.n_states, shape.n_joint_actions
    r_hat, p_hat = mle_game(dataset, bound)
    gamma = output.gamma
    rho_p = widths.rho_p_or_zero(shape)

    rewards = np.empty((n, H, S, J))
    transitions = p_hat.copy()
    for h in range(H):
        for s in range(S):
            for a in range(J):
                u = np.clip(gamma[:, h, s, a], -widths.rho_r[h, s, a],
                            widths.rho_r[h, s, a])
                residuals = gamma[:, h, s, a] - u
                rewards[:, h, s, a] = r_hat[:, h, s, a] - u
                if h == H - 1:
                    if np.abs(residuals).max() > 1e-12:
                        raise ValueError(
                            "bonus exceeds the final-period reward width")
                    continue
                if np.abs(residuals).max() > 1e-12:
                    tilt = _shared_tilt(residuals, output.v_lower[:, h + 1],
                                        p_hat[h, s, a], rho_p[h, s, a])
                    transitions[h, s, a] = p_hat[h, s, a] - tilt

    worst = 0.0
    for i in range(n):
        for h in range(H):
            expected = rewards[i, h].copy()
            if h < H - 1:
                expected += np.einsum("sjt,t->sj", transitions[h],
                                      output.v_lower[i, h + 1])
            worst = max(worst, float(np.abs(expected - output.q_lower[i, h]).max()))

    game = MarkovGame(shape, rewards, transitions, empirical_initial_dist(dataset),
                      math.inf)
    return game, worst
