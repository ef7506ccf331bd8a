"""Reward poisoning for bandit games (one state, one period).

Two learner models are supported: a plain maximum-likelihood learner, for
which the poisoned means must make the target a strict dominant-strategy
equilibrium, and a confidence-bound learner, for which the lower confidence
bound of the target action must clear every rival action's upper confidence
bound by the margin.

The confidence-bound comparison min(CI of target) >= max(CI of rival) + iota
nominally involves interval endpoints clipped to [-b, b].  Because poisoned
means are averages of rewards that themselves live in [-b, b], the target's
lower endpoint can never reach b + iota, so the clipped comparison is
equivalent to the two-sided linear constraint

    R(target) - rho(target) >= R(rival) + rho(rival) + iota

whenever the margin is positive.  The LPs encode that reduced form; the
clipped margins are still what the result certificate reports.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from . import lp
from .confidence import ConfidenceWidths
from .errors import Infeasible
from .game import GameShape, OfflineDataset, check_full_coverage, visit_counts

COST_TOL = 1e-9
MARGIN_SLACK = 1e-7


@dataclass(frozen=True)
class BanditAttackInstance:
    """A poisoning problem on a single-state, single-period dataset."""

    dataset: OfflineDataset
    target: tuple[int, ...]
    widths: ConfidenceWidths
    iota: float
    bound: float

    def __post_init__(self):
        shape = self.dataset.shape
        if shape.horizon != 1 or shape.n_states != 1:
            raise ValueError("bandit instances require H = 1 and a single state")
        object.__setattr__(self, "target", tuple(int(a) for a in self.target))
        if len(self.target) != shape.n_players:
            raise ValueError("target must give one action per player")
        for a, cap in zip(self.target, shape.actions_per_player):
            if not 0 <= a < cap:
                raise ValueError("target action out of range")
        if self.iota < 0:
            raise ValueError("iota must be nonnegative")
        if not self.bound > 0:
            raise ValueError("bound must be positive")
        report = check_full_coverage(visit_counts(self.dataset))
        if not report.satisfied:
            from .errors import UncoveredCell
            raise UncoveredCell(report.uncovered)

    @property
    def shape(self) -> GameShape:
        return self.dataset.shape

    @cached_property
    def counts(self) -> np.ndarray:
        """(J,) visit count per joint action."""
        return visit_counts(self.dataset).counts[0, 0]

    @cached_property
    def mle(self) -> np.ndarray:
        """(n, J) empirical mean reward per player and joint action."""
        shape = self.shape
        cells = self.dataset.joint_action_indices[:, 0]
        sums = np.zeros((shape.n_players, shape.n_joint_actions))
        for i in range(shape.n_players):
            np.add.at(sums[i], cells, self.dataset.rewards[:, 0, i])
        return sums / self.counts[None, :]

    @property
    def rho_r(self) -> np.ndarray:
        """(J,) reward half-width per joint action (learner independent)."""
        return self.widths.rho_r[0, 0]

    def target_index(self) -> int:
        return self.shape.joint_index(self.target)


@dataclass(frozen=True)
class AttackResult:
    """A solved attack: per-episode poisoned rewards, their MLE, and margins."""

    mode: str
    poisoned_rewards: np.ndarray  # (K, H, n)
    poisoned_mle: np.ndarray      # (n, H, S, J)
    cost: float
    certificate: dict

    def validate(self, dataset: OfflineDataset, bound: float) -> None:
        if np.isfinite(bound) and np.abs(self.poisoned_rewards).max() > bound + COST_TOL:
            raise AssertionError("poisoned reward outside [-b, b]")
        recomputed = float(np.abs(self.poisoned_rewards - dataset.rewards).sum())
        if abs(recomputed - self.cost) > COST_TOL * max(1.0, recomputed):
            raise AssertionError("reported cost disagrees with the reward table")
        from .game import mle_game
        mle_r, _ = mle_game(dataset.replace_rewards(self.poisoned_rewards), bound)
        if np.abs(mle_r - self.poisoned_mle).max() > 1e-9:
            raise AssertionError("reported MLE disagrees with the poisoned rewards")


# ---------------------------------------------------------------------------
# LP construction.
# ---------------------------------------------------------------------------

def _base_bandit_lp(instance: BanditAttackInstance, formulation: str = "episode"):
    """Shared variables and constraints: reward deviations, MLE linkage, box.

    `episode` is the direct form (variables r[k, i], t[k, i], then R[i, a];
    count 2*n*K + n*|A|).  `delta` is the equivalent split form: one
    nonnegative up/down shift pair per reward with the box folded into the
    shift bounds, which removes all |r - r0| rows and solves much faster.
    """
    shape = instance.shape
    n, J, K = shape.n_players, shape.n_joint_actions, instance.dataset.n_episodes
    b = instance.bound
    r0 = instance.dataset.rewards[:, 0, :]
    cells = instance.dataset.joint_action_indices[:, 0]
    members = [np.nonzero(cells == a)[0] for a in range(J)]
    model = lp.LpModel()

    if formulation == "episode":
        r_idx = np.empty((K, n), dtype=int)
        t_idx = np.empty((K, n), dtype=int)
        for k in range(K):
            for i in range(n):
                r_idx[k, i] = model.add_variable(f"r[{k},{i}]", -b, b)
        for k in range(K):
            for i in range(n):
                t_idx[k, i] = model.add_variable(f"t[{k},{i}]", 0.0, math.inf)
        R_idx = np.empty((n, J), dtype=int)
        for i in range(n):
            for a in range(J):
                R_idx[i, a] = model.add_variable(f"R[{i},{a}]")
        for k in range(K):
            for i in range(n):
                model.add_constraint([(r_idx[k, i], 1.0), (t_idx[k, i], -1.0)],
                                     lp.LESS, r0[k, i])
                model.add_constraint([(r_idx[k, i], -1.0), (t_idx[k, i], -1.0)],
                                     lp.LESS, -r0[k, i])
                model.add_objective_term(t_idx[k, i], 1.0)
        for i in range(n):
            for a in range(J):
                coeffs = [(int(r_idx[k, i]), 1.0) for k in members[a]]
                coeffs.append((int(R_idx[i, a]), -float(instance.counts[a])))
                model.add_constraint(coeffs, lp.EQUAL, 0.0)
        extract = _EpisodeExtractor(r_idx)
        return model, extract, R_idx

    up_idx = np.empty((K, n), dtype=int)
    dn_idx = np.empty((K, n), dtype=int)
    for k in range(K):
        for i in range(n):
            up_idx[k, i] = model.add_variable(
                f"d+[{k},{i}]", 0.0, b - r0[k, i] if math.isfinite(b) else math.inf)
            dn_idx[k, i] = model.add_variable(
                f"d-[{k},{i}]", 0.0, b + r0[k, i] if math.isfinite(b) else math.inf)
            model.add_objective_term(up_idx[k, i], 1.0)
            model.add_objective_term(dn_idx[k, i], 1.0)
    R_idx = np.empty((n, J), dtype=int)
    for i in range(n):
        for a in range(J):
            R_idx[i, a] = model.add_variable(f"R[{i},{a}]")
    for i in range(n):
        for a in range(J):
            coeffs = [(int(up_idx[k, i]), 1.0) for k in members[a]]
            coeffs += [(int(dn_idx[k, i]), -1.0) for k in members[a]]
            coeffs.append((int(R_idx[i, a]), -float(instance.counts[a])))
            model.add_constraint(coeffs, lp.EQUAL, -float(r0[members[a], i].sum()))
    extract = _DeltaExtractor(up_idx, dn_idx, r0)
    return model, extract, R_idx


class _EpisodeExtractor:
    def __init__(self, r_idx):
        self.r_idx = r_idx

    def __call__(self, solution) -> np.ndarray:
        return solution.values[self.r_idx][:, None, :]


class _DeltaExtractor:
    def __init__(self, up_idx, dn_idx, r0):
        self.up_idx = up_idx
        self.dn_idx = dn_idx
        self.r0 = r0

    def __call__(self, solution) -> np.ndarray:
        shift = solution.values[self.up_idx] - solution.values[self.dn_idx]
        return (self.r0 + shift)[:, None, :]


def _margin_rows(model, instance: BanditAttackInstance, R_idx, rho: np.ndarray | None):
    """Dominance rows R(rival) - R(target-row cell) <= -(rho terms) - iota."""
    shape = instance.shape
    for i in range(shape.n_players):
        tgt = instance.target[i]
        for o in range(shape.n_others(i)):
            tgt_cell = shape.compose(i, tgt, o)
            for a_i in range(shape.actions_per_player[i]):
                if a_i == tgt:
                    continue
                dev_cell = shape.compose(i, a_i, o)
                rhs = -instance.iota
                if rho is not None:
                    rhs -= rho[tgt_cell] + rho[dev_cell]
                model.add_constraint(
                    [(int(R_idx[i, dev_cell]), 1.0), (int(R_idx[i, tgt_cell]), -1.0)],
                    lp.LESS, rhs)


def build_mle_attack_lp(instance: BanditAttackInstance) -> lp.LpModel:
    """Attack LP for a point-estimate learner: target strictly dominant in the
    poisoned means."""
    model, _, R_idx = _base_bandit_lp(instance)
    _margin_rows(model, instance, R_idx, rho=None)
    return model


def build_ci_attack_lp(instance: BanditAttackInstance) -> lp.LpModel:
    """Attack LP for a confidence-bound learner: the target's lower confidence
    bound clears every rival's upper bound by the margin (see module note on
    the clipped-comparison reduction)."""
    model, _, R_idx = _base_bandit_lp(instance)
    _margin_rows(model, instance, R_idx, rho=instance.rho_r)
    return model


def bandit_feasibility(instance: BanditAttackInstance) -> bool:
    """Sufficient condition iota <= 2b - 2*rho(a) for every joint action.

    The LP remains the ground truth; this check never reports a false
    positive because pinning the target row at +b and everything else at -b
    satisfies every dominance row under the condition.
    """
    if not np.isfinite(instance.bound):
        return True
    return bool(np.all(instance.iota <= 2 * instance.bound - 2 * instance.rho_r + 1e-12))


def clipped_margins(instance: BanditAttackInstance, mle: np.ndarray) -> np.ndarray:
    """Per (player, rival profile) worst separation margin of the poisoned MLE
    under clipped confidence intervals; >= 0 certifies the attack."""
    shape = instance.shape
    b = instance.bound
    rho = instance.rho_r
    out = np.full((shape.n_players, max(shape.n_others(i) for i in range(shape.n_players))),
                  math.inf)
    for i in range(shape.n_players):
        tgt = instance.target[i]
        for o in range(shape.n_others(i)):
            tgt_cell = shape.compose(i, tgt, o)
            low = mle[i, tgt_cell] - rho[tgt_cell]
            if np.isfinite(b):
                low = max(low, -b)
            worst = math.inf
            for a_i in range(shape.actions_per_player[i]):
                if a_i == tgt:
                    continue
                dev_cell = shape.compose(i, a_i, o)
                high = mle[i, dev_cell] + rho[dev_cell]
                if np.isfinite(b):
                    high = min(high, b)
                worst = min(worst, low - high - instance.iota)
            out[i, o] = worst
    return out


def solve_bandit_attack(instance: BanditAttackInstance,
                        learner_model: str = "confidence_bound") -> AttackResult:
    """Solve the poisoning LP and certify the separation by recomputation.

    Ties between optimal poisonings are broken by a second solve that pushes
    target-row means as high as the optimal cost allows; this pins the
    poisoned MLE to a deterministic table.
    """
    if learner_model not in ("mle", "confidence_bound"):
        raise ValueError(f"unknown learner model {learner_model!r}")
    rho = None if learner_model == "mle" else instance.rho_r
    model, extract, R_idx = _base_bandit_lp(instance, formulation="delta")
    _margin_rows(model, instance, R_idx, rho)
    first = lp.solve(model)
    if first.status != "optimal":
        raise Infeasible(f"attack LP is {first.status}")
    optimum = first.objective_value

    # tie-break: maximize target-row means subject to the optimal cost
    model.add_constraint(list(model.objective), lp.LESS, optimum)
    model.objective = []
    shape = instance.shape
    for i in range(shape.n_players):
        for o in range(shape.n_others(i)):
            model.add_objective_term(int(R_idx[i, shape.compose(i, instance.target[i], o)]), -1.0)
    second = lp.solve(model)
    solution = second if second.status == "optimal" else first

    rewards = extract(solution)
    if np.isfinite(instance.bound):
        rewards = np.clip(rewards, -instance.bound, instance.bound)
    shape = instance.shape
    mle = np.empty((shape.n_players, 1, 1, shape.n_joint_actions))
    cells = instance.dataset.joint_action_indices[:, 0]
    for i in range(shape.n_players):
        sums = np.zeros(shape.n_joint_actions)
        np.add.at(sums, cells, rewards[:, 0, i])
        mle[i, 0, 0] = sums / instance.counts

    cost = float(np.abs(rewards - instance.dataset.rewards).sum())
    if abs(cost - optimum) > 1e-6 * max(1.0, abs(optimum)):
        raise AssertionError("tie-break pass changed the optimal cost")

    if learner_model == "mle":
        margins = np.full((shape.n_players, max(shape.n_others(i) for i in range(shape.n_players))), math.inf)
        for i in range(shape.n_players):
            tgt = instance.target[i]
            for o in range(shape.n_others(i)):
                tgt_cell = shape.compose(i, tgt, o)
                for a_i in range(shape.actions_per_player[i]):
                    if a_i == tgt:
                        continue
                    dev = shape.compose(i, a_i, o)
                    margins[i, o] = min(margins[i, o],
                                        mle[i, 0, 0, tgt_cell] - mle[i, 0, 0, dev] - instance.iota)
    else:
        margins = clipped_margins(instance, mle[:, 0, 0, :])
    if margins.size and margins.min() < -MARGIN_SLACK:
        raise AssertionError("solved attack fails its own separation check")

    result = AttackResult(
        mode=learner_model,
        poisoned_rewards=rewards,
        poisoned_mle=mle,
        cost=cost,
        certificate={
            "margins": margins.tolist(),
            "iota": instance.iota,
            "bound": None if math.isinf(instance.bound) else instance.bound,
            "lp_iterations": first.iterations,
        },
    )
    result.validate(instance.dataset, instance.bound)
    return result


# ---------------------------------------------------------------------------
# Single-agent reduction baseline.
# ---------------------------------------------------------------------------

def _marginal_widths(instance: BanditAttackInstance, player: int,
                     marginal_counts: np.ndarray) -> np.ndarray:
    """Reward half-widths for one player's marginal dataset.

    Count-based modes are re-evaluated on the marginal counts (the learner
    sees one action set and one cell per own action); constant widths carry
    over; explicit tables fall back to a count-weighted average over the
    joint cells they marginalize.
    """
    widths = instance.widths
    n_own = instance.shape.actions_per_player[player]
    if widths.mode == "hoeffding" and "matched" not in widths.params:
        delta = widths.params["delta"]
        coef = widths.params.get("reward_coef", 2.0)
        return coef * instance.bound * np.sqrt(
            math.log(n_own / delta) / np.maximum(marginal_counts, 1))
    if widths.mode == "constant":
        return np.full(n_own, widths.params["rho_r"])
    rho = instance.rho_r
    own_of = instance.shape.own_action_of(player)
    out = np.zeros(n_own)
    for v in range(n_own):
        mask = own_of == v
        out[v] = float((rho[mask] * instance.counts[mask]).sum() / instance.counts[mask].sum())
    return out


def single_agent_reduction_cost(instance: BanditAttackInstance) -> float:
    """Cost of attacking each learner's marginal dataset separately.

    Learner i only sees (own action, own reward); the attack must separate
    the target action's marginal mean from every other action's by the same
    margin, with widths re-derived from the marginal counts.  Always at least
    the joint attack's cost, and strictly more on datasets whose marginal
    means invert the joint dominance ordering.
    """
    shape = instance.shape
    total = 0.0
    cells = instance.dataset.joint_action_indices[:, 0]
    for i in range(shape.n_players):
        own = shape.own_action_of(i)[cells]  # (K,) own action per episode
        n_own = shape.actions_per_player[i]
        counts = np.bincount(own, minlength=n_own)
        rho = _marginal_widths(instance, i, counts)
        b = instance.bound
        K = instance.dataset.n_episodes
        r0 = instance.dataset.rewards[:, 0, i]
        model = lp.LpModel()
        up_idx = [model.add_variable(f"d+[{k}]", 0.0,
                                     b - r0[k] if math.isfinite(b) else math.inf)
                  for k in range(K)]
        dn_idx = [model.add_variable(f"d-[{k}]", 0.0,
                                     b + r0[k] if math.isfinite(b) else math.inf)
                  for k in range(K)]
        M_idx = [model.add_variable(f"M[{v}]") for v in range(n_own)]
        for k in range(K):
            model.add_objective_term(up_idx[k], 1.0)
            model.add_objective_term(dn_idx[k], 1.0)
        for v in range(n_own):
            members = np.nonzero(own == v)[0]
            coeffs = [(up_idx[k], 1.0) for k in members]
            coeffs += [(dn_idx[k], -1.0) for k in members]
            coeffs.append((M_idx[v], -float(counts[v])))
            model.add_constraint(coeffs, lp.EQUAL, -float(r0[members].sum()))
        tgt = instance.target[i]
        for v in range(n_own):
            if v == tgt:
                continue
            model.add_constraint([(M_idx[v], 1.0), (M_idx[tgt], -1.0)], lp.LESS,
                                 -(rho[v] + rho[tgt] + instance.iota))
        solution = lp.solve(model)
        if solution.status != "optimal":
            raise Infeasible(f"single-agent reduction for learner {i} is {solution.status}")
        total += solution.objective_value
    return float(total)
