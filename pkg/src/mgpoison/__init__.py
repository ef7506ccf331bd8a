"""Minimal-L1 reward poisoning of offline multi-agent RL datasets.

The attack rewrites per-episode rewards so that a chosen joint policy
becomes the strictly dominant equilibrium of every Markov game consistent
with the poisoned dataset's confidence sets, at minimal total reward change.
"""

from .bandit import (AttackResult, BanditAttackInstance, bandit_feasibility,
                     build_ci_attack_lp, build_mle_attack_lp,
                     single_agent_reduction_cost, solve_bandit_attack)
from .confidence import (ConfidenceWidths, PlausibleGameSampler, constant_widths,
                         explicit_widths, hoeffding_widths, povi_matched_widths,
                         sample_plausible_game, uniform_transition_in_ci)
from .costs import (CostBoundsReport, PeriodInstance, atk_mechanism, cost_bounds,
                    delta_h, dominance_gaps, lift_mle_to_rewards, overflow_terms,
                    random_game_gap_estimate, worst_case_instance)
from .errors import (EmptySet, Infeasible, InvalidDelta, InvalidMargin,
                     MgPoisonError, NoEquilibrium, NumericalFailure,
                     UncoveredCell, VerificationFailure)
from .game import (GameShape, JointPolicy, MarkovGame, OfflineDataset, QTables,
                   VisitCounts, check_full_coverage, is_iota_mpdse, load_dataset,
                   mle_game, mle_markov_game, q_values, save_dataset, visit_counts)
from .learners import (BonusSpec, LearnerOutput, bonus_gamma, check_assumption_a1,
                       ne_oracle, povi, thm_witness_game)
from .lp import LpModel, LpSolution, dump_mps, solve
from .markov import (MarkovAttackInstance, QBounds, VerificationReport,
                     build_markov_attack_lp, markov_feasibility_condition,
                     q_ci_bounds, required_counts, required_counts_generic,
                     solve_markov_attack, verify_attack)

__version__ = "0.1.0"
