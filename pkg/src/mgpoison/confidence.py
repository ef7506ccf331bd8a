"""Confidence widths, plausible-game sets, and sampling from them.

A plausible game keeps every reward within +-rho^R of the dataset mean
(optionally clipped to the reward bounds) and every transition row within L1
distance rho^P of the empirical row.  Samplers here emit members of that set
and re-check membership before returning; exact inner extremizers over the
transition set back the attack certificates.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .errors import EmptySet, InvalidDelta
from .game import GameShape, MarkovGame, VisitCounts

MEMBERSHIP_TOL = 1e-9

STRATEGIES = ("extreme_rewards", "random_interior", "l1_vertex_transitions")


@dataclass(frozen=True)
class ConfidenceWidths:
    """Per-cell interval half-widths for rewards and transitions.

    `rho_p` is None when the horizon is 1 (no transition ever observed);
    otherwise it covers periods 1..H-1.
    """

    rho_r: np.ndarray             # (H, S, J)
    rho_p: Optional[np.ndarray]   # (H-1, S, J) or None
    mode: str                     # "hoeffding" | "constant" | "explicit"
    params: dict

    def __post_init__(self):
        rr = np.asarray(self.rho_r, dtype=np.float64)
        if (rr < 0).any():
            raise ValueError("reward widths must be nonnegative")
        rr.setflags(write=False)
        object.__setattr__(self, "rho_r", rr)
        if self.rho_p is not None:
            rp = np.asarray(self.rho_p, dtype=np.float64)
            if (rp < 0).any():
                raise ValueError("transition widths must be nonnegative")
            rp.setflags(write=False)
            object.__setattr__(self, "rho_p", rp)

    @property
    def max_rho_r(self) -> float:
        return float(self.rho_r.max())

    def rho_p_or_zero(self, shape: GameShape) -> np.ndarray:
        if self.rho_p is not None:
            return self.rho_p
        return np.zeros((shape.horizon - 1, shape.n_states, shape.n_joint_actions))

    def to_json_dict(self) -> dict:
        return {
            "mode": self.mode,
            "params": {k: (None if isinstance(v, float) and math.isinf(v) else v)
                       for k, v in self.params.items()},
            "rho_r": self.rho_r.tolist(),
            "rho_p": None if self.rho_p is None else self.rho_p.tolist(),
        }


def hoeffding_widths(counts: VisitCounts, shape: GameShape, bound: float,
                     delta: float, *, reward_coef: float = 2.0,
                     beta_coef: float = 1.0) -> ConfidenceWidths:
    """Count-based widths that shrink like 1/sqrt(N).

    Rewards use reward_coef * b * sqrt(log(H*|S|*|A|/delta) / max(N, 1));
    transitions use sqrt(|S| * beta / (N + 1)) with
    beta = beta_coef * log(|S|*|A|*H*N_total/delta).  Both proportionality
    constants are exposed since only the 1/sqrt(N) scaling is canonical.
    """
    if not 0 < delta < 1:
        raise InvalidDelta(f"delta must be in (0, 1), got {delta}")
    if not np.isfinite(bound) or bound <= 0:
        raise ValueError("hoeffding widths need a finite positive reward bound")
    H, S, J = shape.horizon, shape.n_states, shape.n_joint_actions
    n_cells = H * S * J
    log_term = math.log(H * S * J / delta)
    rho_r = reward_coef * bound * np.sqrt(log_term / np.maximum(counts.counts, 1))
    rho_p = None
    if H > 1:
        n_total = int(counts.counts.sum())
        beta = beta_coef * math.log(S * J * H * max(n_total, 2) / delta)
        rho_p = np.sqrt(S * beta / (counts.counts[: H - 1] + 1.0))
    return ConfidenceWidths(rho_r, rho_p, "hoeffding",
                            {"delta": delta, "reward_coef": reward_coef,
                             "beta_coef": beta_coef, "n_cells": n_cells})


def povi_matched_widths(counts: VisitCounts, shape: GameShape, delta: float,
                        *, c: float = 1.0) -> ConfidenceWidths:
    """Widths sharing the same log factor as the learner bonus magnitude.

    Rewards: H*sqrt(beta/(N+1)); transitions: sqrt(|S|*beta/(N+1)); with
    beta = c*log(|S|*|A|*H*N_total/delta).  A bonus built from the same beta
    then satisfies |Gamma| <= rho^R cell by cell.
    """
    if not 0 < delta < 1:
        raise InvalidDelta(f"delta must be in (0, 1), got {delta}")
    H, S, J = shape.horizon, shape.n_states, shape.n_joint_actions
    n_total = int(counts.counts.sum())
    beta = c * math.log(S * J * H * max(n_total, 2) / delta)
    rho_r = H * np.sqrt(beta / (counts.counts + 1.0))
    rho_p = None
    if H > 1:
        rho_p = np.sqrt(S * beta / (counts.counts[: H - 1] + 1.0))
    return ConfidenceWidths(rho_r, rho_p, "hoeffding",
                            {"delta": delta, "c": c, "matched": True})


def constant_widths(shape: GameShape, rho_r: float, rho_p: float = 0.0) -> ConfidenceWidths:
    H, S, J = shape.horizon, shape.n_states, shape.n_joint_actions
    table_r = np.full((H, S, J), float(rho_r))
    table_p = np.full((H - 1, S, J), float(rho_p)) if H > 1 else None
    return ConfidenceWidths(table_r, table_p, "constant",
                            {"rho_r": float(rho_r), "rho_p": float(rho_p)})


def explicit_widths(rho_r: np.ndarray, rho_p: Optional[np.ndarray]) -> ConfidenceWidths:
    return ConfidenceWidths(np.asarray(rho_r, float),
                            None if rho_p is None else np.asarray(rho_p, float),
                            "explicit", {})


# ---------------------------------------------------------------------------
# Reward intervals.
# ---------------------------------------------------------------------------

def reward_intervals(center: np.ndarray, rho_r: np.ndarray, bound: float,
                     clip: bool) -> tuple[np.ndarray, np.ndarray]:
    """Elementwise [lo, hi] of the reward confidence set; rho_r broadcasts
    over the leading player axis of `center`.  Raises EmptySet when clipping
    empties an interval."""
    lo = center - rho_r
    hi = center + rho_r
    if clip and np.isfinite(bound):
        lo = np.maximum(lo, -bound)
        hi = np.minimum(hi, bound)
        if (lo > hi + MEMBERSHIP_TOL).any():
            raise EmptySet("a reward interval is empty after clipping")
    return lo, hi


# ---------------------------------------------------------------------------
# Exact extremization of a linear function over the transition set.
# ---------------------------------------------------------------------------

def l1_extremize(values: np.ndarray, p_hat: np.ndarray, radius: float,
                 maximize: bool) -> tuple[float, np.ndarray]:
    """Optimize sum_j p_j*values_j over {p in simplex : ||p - p_hat||_1 <= radius}.

    Up to radius/2 of probability mass moves from the worst coordinates into
    the single best one; the greedy transfer is exact because the objective
    is linear and the constraint set is the simplex cut by an L1 ball.
    Returns (optimal value, achieving distribution).
    """
    v = np.asarray(values, dtype=float)
    p = np.asarray(p_hat, dtype=float).copy()
    if radius < 0:
        raise ValueError("radius must be nonnegative")
    sign = 1.0 if maximize else -1.0
    target = int(np.argmax(sign * v))
    budget = min(radius / 2.0, 1.0 - p[target])
    if budget > 0:
        donors = np.argsort(sign * v)  # worst first
        for j in donors:
            if j == target or budget <= 0:
                continue
            take = min(p[j], budget)
            if sign * (v[target] - v[j]) <= 0:
                break  # no remaining donor improves the objective
            p[j] -= take
            p[target] += take
            budget -= take
    return float(p @ v), p


def box_extremize(values: np.ndarray, p_hat: np.ndarray, radius: float,
                  maximize: bool) -> tuple[float, np.ndarray]:
    """Optimize over {p in simplex : |p_j - p_hat_j| <= radius for all j}.

    This per-coordinate relaxation of the L1 ball is the set the attack LP
    dualizes; it contains the L1 ball of the same radius.
    """
    v = np.asarray(values, dtype=float)
    p_hat = np.asarray(p_hat, dtype=float)
    lo = np.maximum(p_hat - radius, 0.0)
    hi = np.minimum(p_hat + radius, 1.0)
    p = lo.copy()
    deficit = 1.0 - lo.sum()
    sign = 1.0 if maximize else -1.0
    for j in np.argsort(-sign * v):  # best first
        add = min(hi[j] - lo[j], deficit)
        p[j] += add
        deficit -= add
        if deficit <= 0:
            break
    return float(p @ v), p


def uniform_transition_in_ci(p_hat_cell: np.ndarray, rho_p_value: float,
                             n_states: int) -> bool:
    """Whether the uniform next-state distribution is a plausible transition."""
    uniform = np.full(n_states, 1.0 / n_states)
    return float(np.abs(np.asarray(p_hat_cell, float) - uniform).sum()) \
        <= rho_p_value + MEMBERSHIP_TOL


# ---------------------------------------------------------------------------
# Sampling plausible games.
# ---------------------------------------------------------------------------

def make_rng(seed: int) -> np.random.Generator:
    """Counter-based generator so that seed streams split reproducibly."""
    return np.random.Generator(np.random.Philox(seed))


@dataclass(frozen=True)
class PlausibleGameSampler:
    """Value object describing the plausible set around a (possibly poisoned)
    MLE; sampling is pure given a generator."""

    shape: GameShape
    center_rewards: np.ndarray        # (n, H, S, J)
    center_transitions: np.ndarray    # (H-1, S, J, S)
    widths: ConfidenceWidths
    bound: float
    initial_dist: np.ndarray
    clip_rewards: bool = True
    seed: int = 0

    def rng(self) -> np.random.Generator:
        return make_rng(self.seed)

    def with_seed(self, seed: int) -> "PlausibleGameSampler":
        return replace(self, seed=seed)

    def center_game(self) -> MarkovGame:
        return MarkovGame(self.shape, self.center_rewards, self.center_transitions,
                          self.initial_dist, self.bound)


def _sample_transitions(sampler: PlausibleGameSampler, rng: np.random.Generator,
                        vertex: bool) -> np.ndarray:
    shape = sampler.shape
    H, S, J = shape.horizon, shape.n_states, shape.n_joint_actions
    out = sampler.center_transitions.copy()
    if H == 1 or sampler.widths.rho_p is None or S == 1:
        return out
    rho_p = sampler.widths.rho_p
    for h in range(H - 1):
        for s in range(S):
            for a in range(J):
                rho = rho_p[h, s, a]
                if rho <= 0:
                    continue
                p_hat = sampler.center_transitions[h, s, a]
                for _ in range(100):
                    if vertex:
                        donor, receiver = rng.choice(S, size=2, replace=False)
                        amount = min(rho / 2.0, p_hat[donor])
                        p = p_hat.copy()
                        p[donor] -= amount
                        p[receiver] += amount
                    else:
                        direction = rng.standard_normal(S)
                        direction -= direction.mean()
                        norm = np.abs(direction).sum()
                        if norm < 1e-12:
                            continue
                        p = p_hat + direction * (rho * rng.uniform() / norm)
                        p = np.maximum(p, 0.0)
                        p /= p.sum()
                    if np.abs(p - p_hat).sum() <= rho + MEMBERSHIP_TOL:
                        out[h, s, a] = p
                        break
                else:
                    raise RuntimeError("transition sampling failed to stay in the set")
    return out


def sample_plausible_game(sampler: PlausibleGameSampler, strategy: str,
                          rng: Optional[np.random.Generator] = None) -> MarkovGame:
    """Draw one member of the plausible set; membership is re-checked before
    returning.  Strategies: extreme_rewards pins every reward at a random
    interval endpoint; l1_vertex_transitions moves rho^P/2 of mass between a
    random state pair; random_interior samples uniformly inside both sets.
    """
    if strategy not in STRATEGIES:
        raise ValueError(f"unknown strategy {strategy!r}")
    if rng is None:
        rng = sampler.rng()
    lo, hi = reward_intervals(sampler.center_rewards, sampler.widths.rho_r,
                              sampler.bound, sampler.clip_rewards)
    if strategy == "extreme_rewards":
        signs = rng.integers(0, 2, size=lo.shape).astype(bool)
        rewards = np.where(signs, hi, lo)
        transitions = sampler.center_transitions.copy()
    else:
        rewards = rng.uniform(lo, hi)
        transitions = _sample_transitions(sampler, rng,
                                          vertex=(strategy == "l1_vertex_transitions"))
    game = MarkovGame(sampler.shape, rewards, transitions, sampler.initial_dist,
                      sampler.bound if sampler.clip_rewards else math.inf)
    ok, violation = ci_membership(game, sampler)
    if not ok:
        raise RuntimeError(f"sampled game violates the plausible set by {violation:g}")
    return game


def ci_membership(game: MarkovGame, sampler: PlausibleGameSampler) -> tuple[bool, float]:
    """Check Markov-game membership in the sampler's plausible set.

    Returns (ok, worst violation), the violation being how far the worst cell
    sits outside its interval or L1 ball.
    """
    worst = 0.0
    dev = np.abs(game.rewards - sampler.center_rewards) - sampler.widths.rho_r
    worst = max(worst, float(dev.max(initial=0.0)))
    if sampler.clip_rewards and np.isfinite(sampler.bound):
        worst = max(worst, float((np.abs(game.rewards) - sampler.bound).max(initial=0.0)))
    if game.transitions.size:
        rho_p = sampler.widths.rho_p_or_zero(sampler.shape)
        l1 = np.abs(game.transitions - sampler.center_transitions).sum(axis=-1)
        worst = max(worst, float((l1 - rho_p).max(initial=0.0)))
    return worst <= MEMBERSHIP_TOL, worst
