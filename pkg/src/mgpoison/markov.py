"""The full Markov-game poisoning attack.

The attacker maintains lower/upper confidence bounds on every learner's
action values by backward induction and requires the target action's lower
bound to clear every rival's upper bound by the margin at all periods and
states.  The inner optimizations over plausible transitions are replaced by
their LP duals, so the whole attack is one linear program over the
per-episode poisoned rewards.

Two encodings of the upper recursion are available:

* ``dual`` (default) follows the plain unclipped linearization: the dual of
  the per-coordinate relaxation of the transition set on both the lower and
  the upper side.  Its bounds are valid but the target cell's upper chain
  accumulates +rho^R per period, which costs feasibility near the margin
  frontier.
* ``bound_cap`` replaces the upper continuation of the target cell by its
  coarsest sound bound, (periods remaining) * b, which is exactly what
  clipping the reward intervals to [-b, b] buys.  Under the condition
  iota <= 2b - (H+1) * rho^R the all-or-nothing attack (+b on target
  actions, -b elsewhere) is feasible for this encoding.

``solve_markov_attack`` tries ``dual`` first and falls back to
``bound_cap``; either way the returned certificate is recomputed from the
solved rewards by exact inner extremization, so its guarantees do not rest
on the LP's internal bound tables.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from functools import cached_property
from typing import Optional

import numpy as np

from . import lp
from .bandit import AttackResult
from .confidence import (ConfidenceWidths, PlausibleGameSampler, STRATEGIES,
                         box_extremize, l1_extremize, make_rng,
                         reward_intervals, sample_plausible_game)
from .errors import Infeasible, InvalidDelta, InvalidMargin, UncoveredCell, VerificationFailure
from .game import (GameShape, JointPolicy, MarkovGame, OfflineDataset,
                   check_full_coverage, empirical_initial_dist, enumerate_policies,
                   is_iota_mpdse, mle_game, q_values, visit_counts)

GUARD_TOL = 1e-6
#: Shapes with at most this many deterministic policies get exhaustive
#: uniqueness sweeps during verification.
ENUMERABLE_POLICIES = 64


@dataclass(frozen=True)
class MarkovAttackInstance:
    """Dataset, target policy, widths, margin, and reward bound."""

    dataset: OfflineDataset
    target: JointPolicy
    widths: ConfidenceWidths
    iota: float
    bound: float

    def __post_init__(self):
        if self.target.shape != self.dataset.shape:
            raise ValueError("target policy shape does not match the dataset")
        if self.iota < 0:
            raise ValueError("iota must be nonnegative")
        if not self.bound > 0:
            raise ValueError("bound must be positive")
        report = check_full_coverage(self.counts_report)
        if not report.satisfied:
            raise UncoveredCell(report.uncovered)

    @property
    def shape(self) -> GameShape:
        return self.dataset.shape

    @cached_property
    def counts_report(self):
        return visit_counts(self.dataset)

    @cached_property
    def counts(self) -> np.ndarray:
        return self.counts_report.counts

    @cached_property
    def mle(self) -> tuple[np.ndarray, np.ndarray]:
        return mle_game(self.dataset, self.bound)

    @property
    def mle_rewards(self) -> np.ndarray:
        return self.mle[0]

    @property
    def mle_transitions(self) -> np.ndarray:
        return self.mle[1]

    def rho_p(self) -> np.ndarray:
        return self.widths.rho_p_or_zero(self.shape)


@dataclass(frozen=True)
class QBounds:
    """Backed-up confidence bounds on action values under the target policy."""

    q_lower: np.ndarray  # (n, H, S, J)
    q_upper: np.ndarray  # (n, H, S, J)

    def __post_init__(self):
        if (self.q_lower > self.q_upper + 1e-9).any():
            raise ValueError("lower bound exceeds upper bound")


def q_ci_bounds(center_rewards: np.ndarray, transitions: np.ndarray,
                widths: ConfidenceWidths, target: JointPolicy, bound: float,
                *, clip: bool, geometry: str = "l1") -> QBounds:
    """Exact confidence-bound backward induction on a fixed reward table.

    `geometry` selects the transition uncertainty set: "l1" is the plausible
    set itself, "box" the per-coordinate relaxation the LP dualizes.
    """
    extremize = l1_extremize if geometry == "l1" else box_extremize
    shape = target.shape
    n, H, S, J = shape.n_players, shape.horizon, shape.n_states, shape.n_joint_actions
    rho_p = widths.rho_p_or_zero(shape)
    lo, hi = reward_intervals(center_rewards, widths.rho_r[None, :, :, :], bound, clip)
    lower = np.zeros((n, H, S, J))
    upper = np.zeros((n, H, S, J))
    lower[:, H - 1] = lo[:, H - 1]
    upper[:, H - 1] = hi[:, H - 1]
    pol = target.joint_indices
    for h in range(H - 2, -1, -1):
        next_low = lower[:, h + 1, np.arange(S), pol[h + 1]]  # (n, S)
        next_up = upper[:, h + 1, np.arange(S), pol[h + 1]]
        for i in range(n):
            for s in range(S):
                for a in range(J):
                    p_hat = transitions[h, s, a]
                    rad = rho_p[h, s, a]
                    inner_min, _ = extremize(next_low[i], p_hat, rad, maximize=False)
                    inner_max, _ = extremize(next_up[i], p_hat, rad, maximize=True)
                    lower[i, h, s, a] = lo[i, h, s, a] + inner_min
                    upper[i, h, s, a] = hi[i, h, s, a] + inner_max
    return QBounds(lower, upper)


def separation_margins(bounds: QBounds, target: JointPolicy, iota: float) -> float:
    """Worst value of lower(target row) - upper(rival) - iota over all cells."""
    shape = target.shape
    worst = math.inf
    for i in range(shape.n_players):
        if shape.actions_per_player[i] < 2:
            continue
        compose = shape._compose_maps[i]
        own = shape.own_action_of(i)
        oth = shape.others_index_of(i)
        for h in range(shape.horizon):
            for s in range(shape.n_states):
                tgt = target.actions[h, s, i]
                low_row = bounds.q_lower[i, h, s, compose[tgt][oth]]
                margins = low_row - bounds.q_upper[i, h, s] - iota
                deviations = own != tgt
                if deviations.any():
                    worst = min(worst, float(margins[deviations].min()))
    return worst


# ---------------------------------------------------------------------------
# LP construction.
# ---------------------------------------------------------------------------

@dataclass
class _Layout:
    mode: str
    formulation: str
    R: np.ndarray        # (n, H, S, J)
    q_low: np.ndarray    # (n, H, S, J)
    q_up: np.ndarray     # (n, H, S, J)
    dual_low: Optional[np.ndarray]  # (n, H-1, S, J, 2S+1) as [u(S), v(S), w]
    dual_up: Optional[np.ndarray]
    r: Optional[np.ndarray] = None          # (K, H, n) episode form
    t: Optional[np.ndarray] = None
    shift_up: Optional[np.ndarray] = None   # (K, H, n) split form
    shift_dn: Optional[np.ndarray] = None

    def rewards_from(self, solution, original: np.ndarray) -> np.ndarray:
        if self.formulation == "episode":
            return solution.values[self.r]
        shift = solution.values[self.shift_up] - solution.values[self.shift_dn]
        return original + shift


def _build_markov_lp(instance: MarkovAttackInstance, mode: str,
                     formulation: str = "episode") -> tuple[lp.LpModel, _Layout]:
    if mode not in ("dual", "bound_cap"):
        raise ValueError(f"unknown upper-chain mode {mode!r}")
    shape = instance.shape
    n, H, S, J = shape.n_players, shape.horizon, shape.n_states, shape.n_joint_actions
    K = instance.dataset.n_episodes
    b = instance.bound
    if mode == "bound_cap" and not np.isfinite(b):
        raise ValueError("bound_cap mode needs a finite reward bound")
    rho_r = instance.widths.rho_r
    rho_p = instance.rho_p()
    p_hat = instance.mle_transitions
    r0 = instance.dataset.rewards

    model = lp.LpModel()
    add = model.add_variable
    r = t = shift_up = shift_dn = None
    if formulation == "episode":
        r = np.array([[[add(f"r[{k},{h},{i}]", -b, b) for i in range(n)]
                       for h in range(H)] for k in range(K)], dtype=int)
        t = np.array([[[add(f"t[{k},{h},{i}]", 0.0, math.inf) for i in range(n)]
                       for h in range(H)] for k in range(K)], dtype=int)
    else:
        shift_up = np.array(
            [[[add(f"d+[{k},{h},{i}]", 0.0,
                   b - r0[k, h, i] if math.isfinite(b) else math.inf)
               for i in range(n)] for h in range(H)] for k in range(K)], dtype=int)
        shift_dn = np.array(
            [[[add(f"d-[{k},{h},{i}]", 0.0,
                   b + r0[k, h, i] if math.isfinite(b) else math.inf)
               for i in range(n)] for h in range(H)] for k in range(K)], dtype=int)
    R = np.array([[[[add(f"R[{i},{h},{s},{a}]") for a in range(J)]
                    for s in range(S)] for h in range(H)] for i in range(n)], dtype=int)
    q_low = np.array([[[[add(f"Ql[{i},{h},{s},{a}]") for a in range(J)]
                        for s in range(S)] for h in range(H)] for i in range(n)], dtype=int)
    q_up = np.array([[[[add(f"Qu[{i},{h},{s},{a}]") for a in range(J)]
                       for s in range(S)] for h in range(H)] for i in range(n)], dtype=int)

    dual_low = dual_up = None
    if H > 1:
        def dual_block(tag):
            block = np.empty((n, H - 1, S, J, 2 * S + 1), dtype=int)
            for i in range(n):
                for h in range(H - 1):
                    for s in range(S):
                        for a in range(J):
                            for s2 in range(S):
                                block[i, h, s, a, s2] = add(f"u{tag}[{i},{h},{s},{a},{s2}]", 0.0, math.inf)
                                block[i, h, s, a, S + s2] = add(f"v{tag}[{i},{h},{s},{a},{s2}]", 0.0, math.inf)
                            block[i, h, s, a, 2 * S] = add(f"w{tag}[{i},{h},{s},{a}]")
            return block
        dual_low = dual_block("l")
        if mode == "dual":
            dual_up = dual_block("u")

    # reward deviations and the L1 objective
    if formulation == "episode":
        for k in range(K):
            for h in range(H):
                for i in range(n):
                    model.add_constraint([(int(r[k, h, i]), 1.0), (int(t[k, h, i]), -1.0)],
                                         lp.LESS, r0[k, h, i])
                    model.add_constraint([(int(r[k, h, i]), -1.0), (int(t[k, h, i]), -1.0)],
                                         lp.LESS, -r0[k, h, i])
                    model.add_objective_term(int(t[k, h, i]), 1.0)
    else:
        for k in range(K):
            for h in range(H):
                for i in range(n):
                    model.add_objective_term(int(shift_up[k, h, i]), 1.0)
                    model.add_objective_term(int(shift_dn[k, h, i]), 1.0)

    # MLE linkage per covered cell
    cells = instance.dataset.joint_action_indices
    states = instance.dataset.states
    members: dict[tuple[int, int, int], list[int]] = {}
    for k in range(K):
        for h in range(H):
            members.setdefault((h, int(states[k, h]), int(cells[k, h])), []).append(k)
    for i in range(n):
        for h in range(H):
            for s in range(S):
                for a in range(J):
                    count = -float(instance.counts[h, s, a])
                    ks = members[(h, s, a)]
                    if formulation == "episode":
                        coeffs = [(int(r[k, h, i]), 1.0) for k in ks]
                        coeffs.append((int(R[i, h, s, a]), count))
                        model.add_constraint(coeffs, lp.EQUAL, 0.0)
                    else:
                        coeffs = [(int(shift_up[k, h, i]), 1.0) for k in ks]
                        coeffs += [(int(shift_dn[k, h, i]), -1.0) for k in ks]
                        coeffs.append((int(R[i, h, s, a]), count))
                        model.add_constraint(coeffs, lp.EQUAL,
                                             -float(r0[ks, h, i].sum()))

    # bound tables: final period is the bare reward interval
    for i in range(n):
        for s in range(S):
            for a in range(J):
                model.add_constraint([(int(q_low[i, H - 1, s, a]), 1.0),
                                      (int(R[i, H - 1, s, a]), -1.0)],
                                     lp.EQUAL, -rho_r[H - 1, s, a])
                model.add_constraint([(int(q_up[i, H - 1, s, a]), 1.0),
                                      (int(R[i, H - 1, s, a]), -1.0)],
                                     lp.EQUAL, rho_r[H - 1, s, a])

    pol = instance.target.joint_indices
    for h in range(H - 2, -1, -1):
        for i in range(n):
            for s in range(S):
                for a in range(J):
                    p_row = p_hat[h, s, a]
                    rad = rho_p[h, s, a]
                    dl = dual_low[i, h, s, a]
                    # lower recursion via the dual of the inner minimization
                    coeffs = [(int(q_low[i, h, s, a]), 1.0), (int(R[i, h, s, a]), -1.0)]
                    for s2 in range(S):
                        coeffs.append((int(dl[s2]), p_row[s2] + rad))
                        coeffs.append((int(dl[S + s2]), -p_row[s2] + rad))
                    coeffs.append((int(dl[2 * S]), 1.0))
                    model.add_constraint(coeffs, lp.EQUAL, -rho_r[h, s, a])
                    for s2 in range(S):
                        # dual feasibility: u - v + w >= -Ql_next(target)
                        model.add_constraint(
                            [(int(dl[s2]), -1.0), (int(dl[S + s2]), 1.0), (int(dl[2 * S]), -1.0),
                             (int(q_low[i, h + 1, s2, pol[h + 1, s2]]), -1.0)],
                            lp.LESS, 0.0)
                    if mode == "dual":
                        du = dual_up[i, h, s, a]
                        coeffs = [(int(q_up[i, h, s, a]), 1.0), (int(R[i, h, s, a]), -1.0)]
                        for s2 in range(S):
                            coeffs.append((int(du[s2]), -(p_row[s2] + rad)))
                            coeffs.append((int(du[S + s2]), p_row[s2] - rad))
                        coeffs.append((int(du[2 * S]), -1.0))
                        model.add_constraint(coeffs, lp.EQUAL, rho_r[h, s, a])
                        for s2 in range(S):
                            model.add_constraint(
                                [(int(du[s2]), -1.0), (int(du[S + s2]), 1.0),
                                 (int(du[2 * S]), -1.0),
                                 (int(q_up[i, h + 1, s2, pol[h + 1, s2]]), 1.0)],
                                lp.LESS, 0.0)
                    else:
                        # coarsest sound continuation: remaining periods at +b
                        model.add_constraint(
                            [(int(q_up[i, h, s, a]), 1.0), (int(R[i, h, s, a]), -1.0)],
                            lp.EQUAL, rho_r[h, s, a] + (H - 1 - h) * b)

    # margin rows
    for i in range(n):
        if shape.actions_per_player[i] < 2:
            continue
        for h in range(H):
            for s in range(S):
                tgt = instance.target.actions[h, s, i]
                for o in range(shape.n_others(i)):
                    tgt_cell = shape.compose(i, tgt, o)
                    for a_i in range(shape.actions_per_player[i]):
                        if a_i == tgt:
                            continue
                        dev = shape.compose(i, a_i, o)
                        model.add_constraint(
                            [(int(q_up[i, h, s, dev]), 1.0), (int(q_low[i, h, s, tgt_cell]), -1.0)],
                            lp.LESS, -instance.iota)

    layout = _Layout(mode, formulation, R, q_low, q_up, dual_low, dual_up,
                     r=r, t=t, shift_up=shift_up, shift_dn=shift_dn)
    return model, layout


def build_markov_attack_lp(instance: MarkovAttackInstance,
                           mode: str = "dual") -> lp.LpModel:
    """The attack LP (see module docstring for the two upper-chain modes)."""
    model, _ = _build_markov_lp(instance, mode)
    return model


def expected_lp_tallies(instance: MarkovAttackInstance, mode: str = "dual") -> dict:
    """Closed-form variable/constraint counts for construction audits."""
    shape = instance.shape
    n, H, S, J = shape.n_players, shape.horizon, shape.n_states, shape.n_joint_actions
    K = instance.dataset.n_episodes
    sep = H * S * sum((A - 1) * (J // A) for A in shape.actions_per_player)
    dual_sides = 2 if mode == "dual" else 1
    variables = 2 * n * K * H + 3 * n * H * S * J \
        + dual_sides * (2 * S + 1) * n * (H - 1) * S * J
    constraints = (2 * n * K * H            # reward deviation rows
                   + n * H * S * J          # MLE linkage
                   + 2 * n * H * S * J      # bound-table definitions
                   + dual_sides * S * n * (H - 1) * S * J  # dual feasibility
                   + sep)                   # margins
    return {"variables": variables, "constraints": constraints}


def markov_feasibility_condition(instance: MarkovAttackInstance) -> bool:
    """Sufficient condition iota <= 2b - (H+1)*rho^R(cell) at every cell.

    Holding it guarantees the all-or-nothing attack separates under the
    bound-capped encoding, so the solver cannot return infeasible.
    """
    if not np.isfinite(instance.bound):
        return True
    H = instance.shape.horizon
    threshold = 2 * instance.bound - (H + 1) * instance.widths.rho_r
    return bool(np.all(instance.iota <= threshold + 1e-12))


def required_counts(shape: GameShape, bound: float, iota: float, delta: float) -> int:
    """Smallest uniform visit count that makes count-based widths pass the
    feasibility condition."""
    if not 0 < delta < 1:
        raise InvalidDelta(f"delta must be in (0, 1), got {delta}")
    if iota >= 2 * bound:
        raise InvalidMargin("no visit count can help when iota >= 2b")
    H, S, J = shape.horizon, shape.n_states, shape.n_joint_actions
    value = 4 * bound ** 2 * (H + 1) ** 2 * math.log(H * S * J / delta) / (2 * bound - iota) ** 2
    return max(1, math.ceil(value - 1e-12))


def required_counts_generic(f_inverse, horizon: int, bound: float, iota: float) -> int:
    """Count bound for any width rho = f(1/N) with strictly increasing f;
    `f_inverse` inverts f."""
    if iota >= 2 * bound:
        raise InvalidMargin("no visit count can help when iota >= 2b")
    x = f_inverse((2 * bound - iota) / (horizon + 1))
    if x <= 0:
        raise InvalidMargin("width function cannot reach the required level")
    return max(1, math.ceil(1.0 / x - 1e-12))


def explicit_attack(instance: MarkovAttackInstance) -> np.ndarray:
    """The all-or-nothing poisoning: +b on target actions, -b elsewhere."""
    if not np.isfinite(instance.bound):
        raise ValueError("the explicit attack needs a finite bound")
    K, H = instance.dataset.n_episodes, instance.shape.horizon
    n = instance.shape.n_players
    rewards = np.empty((K, H, n))
    for h in range(H):
        tgt = instance.target.actions[h, instance.dataset.states[:, h]]  # (K, n)
        rewards[:, h, :] = np.where(instance.dataset.actions[:, h, :] == tgt,
                                    instance.bound, -instance.bound)
    return rewards


# ---------------------------------------------------------------------------
# Solving and post-solve guarding.
# ---------------------------------------------------------------------------

def _extract_table(solution, idx: np.ndarray) -> np.ndarray:
    return solution.values[idx]


def _implied_inner_min(instance: MarkovAttackInstance, layout: _Layout, solution) -> np.ndarray:
    """Value of the inner minimization implied by the lower dual variables."""
    shape = instance.shape
    n, H, S, J = shape.n_players, shape.horizon, shape.n_states, shape.n_joint_actions
    p_hat = instance.mle_transitions
    rho_p = instance.rho_p()
    out = np.zeros((n, H - 1, S, J))
    for i in range(n):
        for h in range(H - 1):
            for s in range(S):
                for a in range(J):
                    dl = solution.values[layout.dual_low[i, h, s, a]]
                    u, v, w = dl[:S], dl[S:2 * S], dl[2 * S]
                    out[i, h, s, a] = -(p_hat[h, s, a] @ (u - v)
                                        + rho_p[h, s, a] * (u + v).sum() + w)
    return out


def solve_markov_attack(instance: MarkovAttackInstance) -> tuple[AttackResult, QBounds]:
    """Solve the attack, then recompute and guard the certificate.

    Guards: the recomputed exact bounds must separate by the margin; the
    LP-embedded tables must bracket the recomputed ones from outside (weak
    duality); and the dual-implied inner values must not overstate the
    empirical transition's continuation.
    """
    model, layout = _build_markov_lp(instance, "dual", formulation="delta")
    solution = lp.solve(model)
    mode = "dual"
    if solution.status != "optimal" and instance.shape.horizon > 1 \
            and np.isfinite(instance.bound):
        model, layout = _build_markov_lp(instance, "bound_cap", formulation="delta")
        solution = lp.solve(model)
        mode = "bound_cap"
    if solution.status != "optimal":
        raise Infeasible(f"attack LP is {solution.status}")

    b = instance.bound
    rewards = layout.rewards_from(solution, instance.dataset.rewards)
    if np.isfinite(b):
        rewards = np.clip(rewards, -b, b)
    poisoned = instance.dataset.replace_rewards(rewards)
    mle_r, mle_p = mle_game(poisoned, b)
    cost = float(np.abs(rewards - instance.dataset.rewards).sum())
    if abs(cost - solution.objective_value) > 1e-6 * max(1.0, cost):
        raise AssertionError("objective and recomputed cost disagree")

    lp_qlow = _extract_table(solution, layout.q_low)
    lp_qup = _extract_table(solution, layout.q_up)

    # certificate: exact recursion at the LP's own semantics, then guards
    clip_cert = mode == "bound_cap"
    cert = q_ci_bounds(mle_r, mle_p, instance.widths, instance.target, b,
                       clip=clip_cert, geometry="l1")
    worst_sep = separation_margins(cert, instance.target, instance.iota)
    if worst_sep < -GUARD_TOL:
        raise AssertionError(f"recomputed bounds violate separation by {-worst_sep:g}")

    if mode == "dual":
        bracket = q_ci_bounds(mle_r, mle_p, instance.widths, instance.target, b,
                              clip=False, geometry="box")
    else:
        bracket = cert
    if (lp_qlow - bracket.q_lower).max() > GUARD_TOL:
        raise AssertionError("LP lower bounds overstate the exact recursion")
    if (bracket.q_upper - lp_qup).max() > GUARD_TOL:
        raise AssertionError("LP upper bounds understate the exact recursion")

    inner_min = None
    if mode == "dual" and instance.shape.horizon > 1:
        inner_min = _implied_inner_min(instance, layout, solution)
        pol = instance.target.joint_indices
        S = instance.shape.n_states
        for h in range(instance.shape.horizon - 1):
            cont = lp_qlow[:, h + 1, np.arange(S), pol[h + 1]]  # (n, S)
            empirical = np.einsum("sjt,nt->nsj", instance.mle_transitions[h], cont)
            if (inner_min[:, h] - empirical - GUARD_TOL > 0).any():
                raise AssertionError("dual-implied inner value exceeds the empirical one")

    # cells where clipping the reward interval to [-b, b] would bind
    binding = []
    if np.isfinite(b):
        rho = instance.widths.rho_r[None]
        hits = np.argwhere((mle_r + rho > b + 1e-12) | (mle_r - rho < -b - 1e-12))
        binding = [tuple(int(x) for x in cell) for cell in hits]

    result = AttackResult(
        mode=f"markov_{mode}",
        poisoned_rewards=rewards,
        poisoned_mle=mle_r,
        cost=cost,
        certificate={
            "lp_mode": mode,
            "iota": instance.iota,
            "bound": None if math.isinf(b) else b,
            "worst_margin": worst_sep,
            "q_lower": cert.q_lower.tolist(),
            "q_upper": cert.q_upper.tolist(),
            "clipped_bounds": clip_cert,
            "clip_binding_cells": binding,
            "lp_iterations": solution.iterations,
            "lp_q_lower": lp_qlow.tolist(),
            "lp_q_upper": lp_qup.tolist(),
            "inner_min_implied": None if inner_min is None else inner_min.tolist(),
        },
    )
    result.validate(instance.dataset, b)
    return result, cert


# ---------------------------------------------------------------------------
# Verification by brute-force game sampling.
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class VerificationReport:
    samples: int
    passes: int
    worst_margin: float
    sandwich_worst_slack: float
    dual_worst_slack: float
    alternatives_rejected: int
    uniqueness_checked: bool
    seed: int

    def to_json_dict(self) -> dict:
        return {
            "samples": self.samples,
            "passes": self.passes,
            "worst_margin": self.worst_margin,
            "sandwich_worst_slack": self.sandwich_worst_slack,
            "dual_worst_slack": self.dual_worst_slack,
            "alternatives_rejected": self.alternatives_rejected,
            "uniqueness_checked": self.uniqueness_checked,
            "seed": self.seed,
        }


def _thread_count(threads: Optional[int]) -> int:
    if threads is not None:
        return max(1, threads)
    env = os.environ.get("MGPOISON_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            pass
    return 1


def verify_attack(instance: MarkovAttackInstance, result: AttackResult,
                  n_samples: int, seed: int, *, q_bounds: Optional[QBounds] = None,
                  threads: Optional[int] = None) -> VerificationReport:
    """Sample plausible games around the poisoned dataset and certify each.

    Every sampled game (clipped reward intervals; extreme, vertex, and
    interior strategies in rotation) must admit the target as its iota-strict
    equilibrium.  When `q_bounds` is given, each sampled game's action values
    must also stay inside them, and on solves that carry dual tables the
    dual-implied inner values must stay below each sampled transition's
    continuation.  On small shapes the empirical game is additionally swept
    for rival equilibria.  Raises VerificationFailure with the offending game
    serialized.
    """
    shape = instance.shape
    sampler = PlausibleGameSampler(
        shape=shape,
        center_rewards=result.poisoned_mle,
        center_transitions=instance.mle_transitions,
        widths=instance.widths,
        bound=instance.bound,
        initial_dist=empirical_initial_dist(instance.dataset),
        clip_rewards=True,
        seed=seed,
    )
    rngs = make_rng(seed).spawn(n_samples)
    lp_qlow = lp_qup = inner_min = None
    if result.certificate.get("inner_min_implied") is not None:
        inner_min = np.asarray(result.certificate["inner_min_implied"])
        lp_qlow = np.asarray(result.certificate["lp_q_lower"])
    pol = instance.target.joint_indices
    S = shape.n_states

    def check(sample_index: int):
        rng = rngs[sample_index]
        strategy = STRATEGIES[sample_index % len(STRATEGIES)]
        game = sample_plausible_game(sampler, strategy, rng)
        decision = is_iota_mpdse(game, instance.target, instance.iota)
        sandwich_slack = math.inf
        dual_slack = math.inf
        if q_bounds is not None:
            tables = q_values(game, instance.target)
            sandwich_slack = float(min(
                (tables.q - q_bounds.q_lower).min(),
                (q_bounds.q_upper - tables.q).min(),
            ))
        if inner_min is not None and shape.horizon > 1:
            for h in range(shape.horizon - 1):
                cont = lp_qlow[:, h + 1, np.arange(S), pol[h + 1]]
                sampled = np.einsum("sjt,nt->nsj", game.transitions[h], cont)
                dual_slack = min(dual_slack, float((sampled - inner_min[:, h]).min()))
        return game, decision, sandwich_slack, dual_slack

    n_threads = _thread_count(threads)
    if n_threads > 1:
        with ThreadPoolExecutor(max_workers=n_threads) as pool:
            outcomes = list(pool.map(check, range(n_samples)))
    else:
        outcomes = [check(j) for j in range(n_samples)]

    passes = 0
    worst_margin = math.inf
    sandwich_worst = math.inf
    dual_worst = math.inf
    for j, (game, decision, sandwich_slack, dual_slack) in enumerate(outcomes):
        worst_margin = min(worst_margin, decision.worst_margin)
        sandwich_worst = min(sandwich_worst, sandwich_slack)
        dual_worst = min(dual_worst, dual_slack)
        failed = not decision.is_equilibrium
        failed |= sandwich_slack < -GUARD_TOL
        failed |= dual_slack < -GUARD_TOL
        if failed:
            payload = {
                "sample": j,
                "strategy": STRATEGIES[j % len(STRATEGIES)],
                "margin": decision.worst_margin,
                "rewards": game.rewards.tolist(),
                "transitions": game.transitions.tolist(),
            }
            raise VerificationFailure(
                f"sample {j} rejects the target (margin {decision.worst_margin:g})",
                game_payload=payload)
        passes += 1

    alternatives = 0
    uniqueness_checked = False
    if instance.iota > 0 and shape.n_deterministic_policies <= ENUMERABLE_POLICIES:
        uniqueness_checked = True
        center = sampler.center_game()
        target_joint = instance.target.joint_indices
        for policy in enumerate_policies(shape):
            if np.array_equal(policy.joint_indices, target_joint):
                continue
            if is_iota_mpdse(center, policy, instance.iota).is_equilibrium:
                raise VerificationFailure(
                    "a rival policy is also an equilibrium of the empirical game",
                    game_payload={"policy": policy.actions.tolist()})
            alternatives += 1

    return VerificationReport(
        samples=n_samples,
        passes=passes,
        worst_margin=worst_margin,
        sandwich_worst_slack=sandwich_worst,
        dual_worst_slack=dual_worst,
        alternatives_rejected=alternatives,
        uniqueness_checked=uniqueness_checked,
        seed=seed,
    )
