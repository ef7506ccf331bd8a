"""Closed-form cost machinery: dominance gaps, overflow terms, the
per-period mechanism, cost brackets, and extremal instance generators.

Per period the poisoning problem decouples into independent rows, one per
(player, state, rival profile): the target cell must rise until it clears
the best rival by the margin, and rival cells too close to the reward cap
must come down.  The row-wise optimum has a closed form, which brackets the
LP cost through the visit counts.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .bandit import BanditAttackInstance, solve_bandit_attack
from .confidence import ConfidenceWidths, constant_widths, explicit_widths, \
    uniform_transition_in_ci
from .errors import Infeasible
from .game import GameShape, JointPolicy, OfflineDataset
from .markov import MarkovAttackInstance, markov_feasibility_condition


@dataclass(frozen=True)
class PeriodInstance:
    """The restriction of an attack instance to a single period."""

    shape: GameShape          # the parent shape; only n/S/actions matter here
    r_hat: np.ndarray         # (n, S, J) empirical means
    counts: np.ndarray        # (S, J)
    rho_r: np.ndarray         # (S, J)
    target: np.ndarray        # (S, n)
    iota: float
    bound: float

    def __post_init__(self):
        if (np.asarray(self.counts) < 1).any():
            raise ValueError("period instance requires full coverage")

    @staticmethod
    def from_markov(instance: MarkovAttackInstance, h: int) -> "PeriodInstance":
        return PeriodInstance(
            shape=instance.shape,
            r_hat=instance.mle_rewards[:, h],
            counts=instance.counts[h],
            rho_r=instance.widths.rho_r[h],
            target=instance.target.actions[h],
            iota=instance.iota,
            bound=instance.bound,
        )


def _epsilon(period: PeriodInstance, i: int, s: int, o: int) -> np.ndarray:
    """(A_i,) combined width rho(a_i, o) + rho(target_i, o) + iota per rival."""
    shape = period.shape
    tgt_cell = shape.compose(i, int(period.target[s, i]), o)
    cells = shape._compose_maps[i][:, o]
    return period.rho_r[s, cells] + period.rho_r[s, tgt_cell] + period.iota


def dominance_gaps(period: PeriodInstance) -> list[np.ndarray]:
    """Minimum target-cell increase per (player, state, rival profile).

    gap = [ max over rivals of (mean(rival) - mean(target) + eps) ]_+ with
    eps the two cells' widths plus the margin.  Clamping outside the max is
    equivalent to clamping each term inside it, since max commutes with the
    nonnegative clamp.
    """
    shape = period.shape
    out = []
    for i in range(shape.n_players):
        table = np.zeros((shape.n_states, shape.n_others(i)))
        for s in range(shape.n_states):
            tgt = int(period.target[s, i])
            for o in range(shape.n_others(i)):
                cells = shape._compose_maps[i][:, o]
                eps = _epsilon(period, i, s, o)
                vals = period.r_hat[i, s, cells] - period.r_hat[i, s, cells[tgt]] + eps
                vals[tgt] = -math.inf
                table[s, o] = max(0.0, float(vals.max()))
        out.append(table)
    return out


def overflow_terms(period: PeriodInstance) -> list[np.ndarray]:
    """Required decrease of rival cells sitting above bound - eps."""
    shape = period.shape
    out = []
    for i in range(shape.n_players):
        table = np.zeros((shape.n_states, shape.n_others(i)))
        if not np.isfinite(period.bound):
            out.append(table)
            continue
        for s in range(shape.n_states):
            tgt = int(period.target[s, i])
            for o in range(shape.n_others(i)):
                cells = shape._compose_maps[i][:, o]
                eps = _epsilon(period, i, s, o)
                excess = period.r_hat[i, s, cells] - period.bound + eps
                excess[tgt] = 0.0
                table[s, o] = float(np.clip(excess, 0.0, None).sum())
        out.append(table)
    return out


def delta_h(period: PeriodInstance) -> float:
    """Total per-period mechanism cost: over all rows, the applied target
    increase plus the overflow decreases.

    The target increase caps at bound - mean(target): when the best rival is
    so high that the cap binds, that rival is itself in the overflow set, and
    its decrease (already counted there) covers the remainder of the gap.
    Adding the raw gap and the overflow would double-count that rival, so the
    capped form is the one that both the mechanism attains and the count-
    weighted sandwich bounds.
    """
    shape = period.shape
    gaps = dominance_gaps(period)
    overflow = overflow_terms(period)
    total = 0.0
    for i in range(shape.n_players):
        for s in range(shape.n_states):
            tgt_cells = shape._compose_maps[i][int(period.target[s, i])]
            cap = period.bound - period.r_hat[i, s, tgt_cells]
            applied = np.minimum(gaps[i][s], cap) if np.isfinite(period.bound) else gaps[i][s]
            total += float(applied.sum() + overflow[i][s].sum())
    return total


def atk_mechanism(period: PeriodInstance) -> np.ndarray:
    """Closed-form optimal poisoning of the per-period means.

    Target cells rise by their dominance gap (capped at the bound); rival
    cells above bound - eps drop to exactly bound - eps.  The result is the
    cheapest mean table with the target dominant under the confidence
    intervals, and its L1 distance from the original means equals delta_h.
    """
    shape = period.shape
    gaps = dominance_gaps(period)
    out = period.r_hat.copy()
    b = period.bound
    for i in range(shape.n_players):
        for s in range(shape.n_states):
            tgt = int(period.target[s, i])
            for o in range(shape.n_others(i)):
                cells = shape._compose_maps[i][:, o]
                tgt_cell = cells[tgt]
                lifted = period.r_hat[i, s, tgt_cell] + gaps[i][s, o]
                out[i, s, tgt_cell] = min(lifted, b) if np.isfinite(b) else lifted
                if np.isfinite(b):
                    eps = _epsilon(period, i, s, o)
                    for a_i in range(shape.actions_per_player[i]):
                        if a_i == tgt:
                            continue
                        if period.r_hat[i, s, cells[a_i]] > b - eps[a_i]:
                            if b - eps[a_i] < -b - 1e-12:
                                raise Infeasible(
                                    "a rival cell would have to drop below -b")
                            out[i, s, cells[a_i]] = b - eps[a_i]
    # recheck the separation the mechanism promises
    for i in range(shape.n_players):
        for s in range(shape.n_states):
            tgt = int(period.target[s, i])
            for o in range(shape.n_others(i)):
                cells = shape._compose_maps[i][:, o]
                low = out[i, s, cells[tgt]] - period.rho_r[s, cells[tgt]]
                for a_i in range(shape.actions_per_player[i]):
                    if a_i == tgt:
                        continue
                    high = out[i, s, cells[a_i]] + period.rho_r[s, cells[a_i]]
                    if low < high + period.iota - 1e-9:
                        raise Infeasible("mechanism cannot reach the required margin")
    return out


def lift_mle_to_rewards(dataset: OfflineDataset, h: int, target_mle: np.ndarray,
                        bound: float) -> np.ndarray:
    """Per-episode rewards at period h whose cell means equal `target_mle`.

    Every episode in a cell shifts by the mean change; where the reward caps
    bind, the clipped remainder is redistributed inside the cell.  All shifts
    share one sign per cell, so the cell's cost is exactly count * |change|.
    """
    shape = dataset.shape
    n, S, J = shape.n_players, shape.n_states, shape.n_joint_actions
    states = dataset.states[:, h]
    cells = dataset.joint_action_indices[:, h]
    out = dataset.rewards[:, h, :].copy()
    for s in range(S):
        for a in range(J):
            members = np.nonzero((states == s) & (cells == a))[0]
            if members.size == 0:
                continue
            for i in range(n):
                r0 = dataset.rewards[members, h, i]
                change = target_mle[i, s, a] - float(r0.mean())
                if change == 0.0:
                    continue
                cap = (bound - r0) if change > 0 else (r0 + bound)
                if not np.isfinite(bound):
                    cap = np.full(members.size, math.inf)
                step = np.minimum(abs(change), cap)
                residual = abs(change) * members.size - step.sum()
                for j in range(members.size):
                    if residual <= 1e-15:
                        break
                    extra = min(residual, cap[j] - step[j])
                    step[j] += extra
                    residual -= extra
                if residual > 1e-9:
                    raise Infeasible("target mean outside the reachable range")
                out[members, i] = r0 + math.copysign(1.0, change) * step
    return out


def mechanism_attack(instance: MarkovAttackInstance) -> tuple[np.ndarray, float]:
    """Apply the per-period mechanism to every period and lift to rewards.

    Returns (poisoned reward array, total L1 cost).  This ignores the
    cross-period coupling, so it certifies per-period dominance only; it is
    exact for single-period instances.
    """
    rewards = instance.dataset.rewards.copy()
    for h in range(instance.shape.horizon):
        period = PeriodInstance.from_markov(instance, h)
        mle = atk_mechanism(period)
        rewards[:, h, :] = lift_mle_to_rewards(instance.dataset, h, mle, instance.bound)
    return rewards, float(np.abs(rewards - instance.dataset.rewards).sum())


# ---------------------------------------------------------------------------
# Period LP costs and the cost-bracket report.
# ---------------------------------------------------------------------------

def period_lp_cost(instance: MarkovAttackInstance, h: int) -> float:
    """Optimal poisoning cost of the period-h restriction, by per-state LPs."""
    shape = instance.shape
    total = 0.0
    states = instance.dataset.states[:, h]
    for s in range(shape.n_states):
        members = np.nonzero(states == s)[0]
        sub_shape = GameShape(shape.n_players, 1, shape.actions_per_player, 1)
        sub = OfflineDataset(
            sub_shape,
            np.zeros((members.size, 1), dtype=int),
            instance.dataset.actions[members, h][:, None, :],
            instance.dataset.rewards[members, h][:, None, :],
        )
        widths = explicit_widths(instance.widths.rho_r[h, s][None, None, :], None)
        sub_instance = BanditAttackInstance(
            sub, tuple(int(a) for a in instance.target.actions[h, s]),
            widths, instance.iota, instance.bound)
        total += solve_bandit_attack(sub_instance).cost
    return total


@dataclass(frozen=True)
class CostBoundsReport:
    """Every cost bracket the instance admits, each labeled by what it does."""

    universal_lower: float
    universal_upper: float
    period_costs: tuple
    last_period_lower: float
    decomposition_upper: Optional[float]
    decomposition_upper_applicable: bool
    uniform_transitions_lower: Optional[float]
    period_sandwich_lower: tuple
    period_sandwich_upper: tuple

    def __post_init__(self):
        pairs = [(self.universal_lower, self.universal_upper)]
        pairs += list(zip(self.period_sandwich_lower, self.period_sandwich_upper))
        if self.decomposition_upper is not None:
            pairs.append((self.last_period_lower, self.decomposition_upper))
            if self.uniform_transitions_lower is not None:
                pairs.append((self.uniform_transitions_lower, self.decomposition_upper))
        for low, high in pairs:
            if low > high + 1e-9:
                raise ValueError("a lower bound exceeds its paired upper bound")

    def to_json_dict(self) -> dict:
        return {
            "universal": {"lower": self.universal_lower, "upper": self.universal_upper},
            "period_costs": list(self.period_costs),
            "last_period_lower": self.last_period_lower,
            "decomposition_upper": self.decomposition_upper,
            "decomposition_upper_applicable": self.decomposition_upper_applicable,
            "uniform_transitions_lower": self.uniform_transitions_lower,
            "period_sandwich": {
                "lower": list(self.period_sandwich_lower),
                "upper": list(self.period_sandwich_upper),
            },
        }


def cost_bounds(instance: MarkovAttackInstance,
                period_optima: Optional[list[float]] = None) -> CostBoundsReport:
    """Assemble every applicable bracket on the optimal attack cost.

    The decomposition upper bound is only emitted when the feasibility
    condition holds (its construction needs the inflated per-period margins
    to stay within the reward box); the uniform-transitions lower bound only
    when the uniform distribution is plausible at every cell.
    """
    shape = instance.shape
    H, S, J = shape.horizon, shape.n_states, shape.n_joint_actions
    n = shape.n_players
    counts = instance.counts_report
    n_max = counts.n_max
    b = instance.bound
    universal_upper = n_max * H * S * n * J * 2 * b if np.isfinite(b) else math.inf

    if period_optima is None:
        period_optima = [period_lp_cost(instance, h) for h in range(H)]
    period_costs = tuple(float(c) for c in period_optima)

    rho_bar = instance.widths.max_rho_r
    applicable = markov_feasibility_condition(instance)
    decomposition_upper = None
    if applicable and np.isfinite(b):
        decomposition_upper = (sum(period_costs)
                               + 2 * b * n * H * S * n_max
                               + H * H * rho_bar * S * n * J * n_max)

    uniform_lower = None
    if H == 1:
        uniform_lower = sum(period_costs)
    else:
        rho_p = instance.rho_p()
        all_uniform = all(
            uniform_transition_in_ci(instance.mle_transitions[h, s, a], rho_p[h, s, a], S)
            for h in range(H - 1) for s in range(S) for a in range(J))
        if all_uniform:
            uniform_lower = sum(period_costs)

    sandwich_low, sandwich_high = [], []
    for h in range(H):
        period = PeriodInstance.from_markov(instance, h)
        delta = delta_h(period)
        sandwich_low.append(float(counts.min_per_period[h]) * delta)
        sandwich_high.append(float(counts.max_per_period[h]) * delta)

    return CostBoundsReport(
        universal_lower=0.0,
        universal_upper=float(universal_upper),
        period_costs=period_costs,
        last_period_lower=period_costs[-1],
        decomposition_upper=decomposition_upper,
        decomposition_upper_applicable=applicable,
        uniform_transitions_lower=uniform_lower,
        period_sandwich_lower=tuple(sandwich_low),
        period_sandwich_upper=tuple(sandwich_high),
    )


# ---------------------------------------------------------------------------
# Extremal instances and the random-game gap estimate.
# ---------------------------------------------------------------------------

def worst_case_instance(n_players: int, n_actions: int, n_states: int, horizon: int,
                        n_per_cell: int, bound: float, rho: float,
                        iota: float) -> MarkovAttackInstance:
    """The expensive-to-poison instance: every cell visited exactly
    `n_per_cell` times, rewards -b on target actions and +b elsewhere, and
    next states scheduled round-robin so the empirical transitions are
    uniform whenever n_states divides n_per_cell.
    """
    if not 0 < iota < bound:
        raise ValueError("the construction expects 0 < iota < b")
    shape = GameShape(n_players, n_states, (n_actions,) * n_players, horizon)
    S, J, H = n_states, shape.n_joint_actions, horizon
    C = S * J
    K = n_per_cell * C
    states = np.empty((K, H), dtype=int)
    actions = np.empty((K, H, n_players), dtype=int)
    rewards = np.empty((K, H, n_players))
    for r in range(n_per_cell):
        for j in range(C):
            k = r * C + j
            for h in range(H):
                cell = (j + r * h * J) % C
                s, a = divmod(cell, J)
                joint = shape.joint_tuple(a)
                states[k, h] = s
                actions[k, h] = joint
                rewards[k, h] = [-bound if joint[i] == 0 else bound
                                 for i in range(n_players)]
    dataset = OfflineDataset(shape, states, actions, rewards)
    target = JointPolicy.constant(shape, (0,) * n_players)
    widths = constant_widths(shape, rho, 0.0)
    return MarkovAttackInstance(dataset, target, widths, iota, bound)


def random_game_gap_estimate(n_players: int, n_actions: int, bound: float,
                             samples: int, seed: int) -> tuple[float, float]:
    """Monte-Carlo mean (and standard error) of the total zero-margin
    dominance gap of a uniformly random payoff matrix, target all-zeros."""
    if samples < 1:
        raise ValueError("need at least one sample")
    shape = GameShape(n_players, 1, (n_actions,) * n_players, 1)
    rng = np.random.Generator(np.random.Philox(seed))
    payoffs = rng.uniform(-bound, bound, size=(samples, n_players, shape.n_joint_actions))
    totals = np.zeros(samples)
    for i in range(n_players):
        cells = shape._compose_maps[i]  # (A_i, O)
        rivals = payoffs[:, i, :][:, cells[1:, :]]      # (samples, A_i-1, O)
        target = payoffs[:, i, :][:, cells[0, :]]       # (samples, O)
        gaps = np.clip(rivals.max(axis=1) - target, 0.0, None)
        totals += gaps.sum(axis=1)
    mean = float(totals.mean())
    stderr = float(totals.std(ddof=1) / math.sqrt(samples)) if samples > 1 else math.inf
    return mean, stderr
