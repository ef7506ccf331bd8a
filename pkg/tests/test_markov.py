import math

import numpy as np
import pytest

from conftest import scheduled_dataset
from mgpoison.bandit import BanditAttackInstance, solve_bandit_attack
from mgpoison.confidence import constant_widths, hoeffding_widths, l1_extremize, make_rng
from mgpoison.costs import period_lp_cost, worst_case_instance
from mgpoison.errors import Infeasible, InvalidMargin, VerificationFailure
from mgpoison.game import (GameShape, JointPolicy, OfflineDataset, mle_game,
                           visit_counts)
from mgpoison.lp import solve
from mgpoison.markov import (MarkovAttackInstance, build_markov_attack_lp,
                             expected_lp_tallies, explicit_attack,
                             markov_feasibility_condition, q_ci_bounds,
                             required_counts, required_counts_generic,
                             separation_margins, solve_markov_attack, verify_attack)

#: ceil(4 * (2+1)^2 * ln(2*2*4/0.05) / (2-0.5)^2), frozen from a 30-digit
#: evaluation of 92.2931359327...
REQUIRED_COUNT_EXAMPLE = 93


def _random_instance(rng, n_states=2, horizon=2, n_per_cell=2, rho_r=0.08,
                     rho_p=0.2, iota=0.2, bound=1.0):
    shape = GameShape(2, n_states, (2, 2), horizon)
    ds = scheduled_dataset(shape, n_per_cell, bound, rng)
    return MarkovAttackInstance(ds, JointPolicy.constant(shape, (0, 0)),
                                constant_widths(shape, rho_r, rho_p), iota, bound)


def test_single_period_matches_bandit(rng):
    for _ in range(5):
        inst = _random_instance(rng, n_states=1, horizon=1, rho_p=0.0)
        bandit = BanditAttackInstance(inst.dataset, (0, 0), inst.widths,
                                      inst.iota, inst.bound)
        result, _ = solve_markov_attack(inst)
        assert result.cost == pytest.approx(
            solve_bandit_attack(bandit).cost, abs=1e-6)


def test_lp_tallies_match_construction(rng):
    inst = _random_instance(rng, n_states=2, horizon=3, n_per_cell=1)
    for mode in ("dual", "bound_cap"):
        model = build_markov_attack_lp(inst, mode)
        expected = expected_lp_tallies(inst, mode)
        assert model.n_variables == expected["variables"]
        assert model.n_constraints == expected["constraints"]


def test_point_transitions_collapse_to_direct_recursion(rng):
    inst = _random_instance(rng, rho_p=0.0, iota=0.15)
    result, bounds = solve_markov_attack(inst)
    assert result.certificate["lp_mode"] == "dual"
    # direct recursion oracle on the solved means
    r_dag = result.poisoned_mle
    p_hat = inst.mle_transitions
    shape = inst.shape
    pol = inst.target.joint_indices
    H, S = shape.horizon, shape.n_states
    low = np.zeros_like(r_dag)
    up = np.zeros_like(r_dag)
    low[:, H - 1] = r_dag[:, H - 1] - inst.widths.rho_r[H - 1]
    up[:, H - 1] = r_dag[:, H - 1] + inst.widths.rho_r[H - 1]
    for h in range(H - 2, -1, -1):
        cont_low = low[:, h + 1, np.arange(S), pol[h + 1]]
        cont_up = up[:, h + 1, np.arange(S), pol[h + 1]]
        low[:, h] = (r_dag[:, h] - inst.widths.rho_r[h]
                     + np.einsum("sjt,nt->nsj", p_hat[h], cont_low))
        up[:, h] = (r_dag[:, h] + inst.widths.rho_r[h]
                    + np.einsum("sjt,nt->nsj", p_hat[h], cont_up))
    np.testing.assert_allclose(bounds.q_lower, low, atol=1e-9)
    np.testing.assert_allclose(bounds.q_upper, up, atol=1e-9)


def test_feasibility_condition_forms():
    inst1 = worst_case_instance(2, 2, 1, 1, 2, 1.0, 0.2, 0.05)
    # single period: condition reduces to 2b - 2*rho
    assert markov_feasibility_condition(inst1) == (0.05 <= 2 - 2 * 0.2)

    shape = GameShape(2, 1, (2, 2), 3)
    ds = scheduled_dataset(shape, 1, 1.0, make_rng(1))
    inst2 = MarkovAttackInstance(ds, JointPolicy.constant(shape, (0, 0)),
                                 constant_widths(shape, 0.3, 0.0), 0.9, 1.0)
    assert not markov_feasibility_condition(inst2)  # 2 - 4*0.3 = 0.8 < 0.9


def test_condition_implies_solvable(rng):
    solved = 0
    for _ in range(50):
        iota = float(rng.uniform(0.05, 1.4))
        rho_r = float(rng.uniform(0.0, 0.25))
        inst = _random_instance(rng, n_states=int(rng.integers(1, 3)),
                                horizon=int(rng.integers(1, 3)),
                                n_per_cell=1, rho_r=rho_r,
                                rho_p=float(rng.uniform(0, 0.3)), iota=iota)
        if not markov_feasibility_condition(inst):
            continue
        result, _ = solve_markov_attack(inst)
        assert result.cost >= 0
        solved += 1
    assert solved >= 15


def test_required_counts_frozen_value():
    shape = GameShape(2, 2, (2, 2), 2)
    assert required_counts(shape, 1.0, 0.5, 0.05) == REQUIRED_COUNT_EXAMPLE
    with pytest.raises(InvalidMargin):
        required_counts(shape, 1.0, 2.0, 0.05)
    # generic form with f(x) = 2b*sqrt(log(HSA/d) * x) reproduces the bound
    log_term = math.log(2 * 2 * 4 / 0.05)
    f_inv = lambda y: y * y / (4 * 1.0 * log_term)
    assert required_counts_generic(f_inv, 2, 1.0, 0.5) == REQUIRED_COUNT_EXAMPLE


def test_required_counts_make_condition_hold(rng):
    shape = GameShape(2, 2, (2, 2), 2)
    need = required_counts(shape, 1.0, 0.5, 0.05)
    ds = scheduled_dataset(shape, need, 1.0, rng)
    widths = hoeffding_widths(visit_counts(ds), shape, 1.0, 0.05)
    inst = MarkovAttackInstance(ds, JointPolicy.constant(shape, (0, 0)),
                                widths, 0.5, 1.0)
    assert markov_feasibility_condition(inst)
    # one episode fewer per cell fails the bound's premise
    small = scheduled_dataset(shape, need - 1, 1.0, rng)
    widths_small = hoeffding_widths(visit_counts(small), shape, 1.0, 0.05)
    assert (widths_small.rho_r.max() > (2 - 0.5) / 3)


def test_explicit_attack_feasible_under_condition(rng):
    for _ in range(10):
        rho = float(rng.uniform(0.0, 0.3))
        inst = _random_instance(rng, horizon=int(rng.integers(1, 4)),
                                n_per_cell=1, rho_r=rho, rho_p=0.2,
                                iota=float(rng.uniform(0.01, 0.9)))
        if not markov_feasibility_condition(inst):
            continue
        rewards = explicit_attack(inst)
        assert set(np.unique(rewards)) <= {-1.0, 1.0}
        flipped = inst.dataset.replace_rewards(rewards)
        r_dag, p_hat = mle_game(flipped, inst.bound)
        # substitute into the bound-capped system: exact lower recursion,
        # capped upper chain
        bounds = q_ci_bounds(r_dag, p_hat, inst.widths, inst.target, inst.bound,
                             clip=False, geometry="box")
        H = inst.shape.horizon
        capped_up = r_dag + inst.widths.rho_r[None]
        for h in range(H - 1):
            capped_up[:, h] += (H - 1 - h) * inst.bound
        from mgpoison.markov import QBounds
        system = QBounds(np.minimum(bounds.q_lower, capped_up), capped_up)
        assert separation_margins(system, inst.target, inst.iota) >= -1e-9


def test_worst_case_cost_bound():
    inst = worst_case_instance(2, 2, 2, 2, 2, 1.0, 0.1, 0.05)
    result, _ = solve_markov_attack(inst)
    lower = 2 * 2 * 2 * 2 * 2 * (2 * 1.0 + 2 * 0.1 + 0.05)  # N*H*S*n*A^(n-1)*(...)
    assert result.cost >= lower - 1e-6


def test_cost_at_least_last_period(rng):
    inst = _random_instance(rng, n_states=2, horizon=2, iota=0.25)
    result, _ = solve_markov_attack(inst)
    last = period_lp_cost(inst, inst.shape.horizon - 1)
    assert result.cost >= last - 1e-6


def test_verification_zero_widths_single_pass(rng):
    inst = _random_instance(rng, rho_r=0.0, rho_p=0.0, iota=0.1)
    result, bounds = solve_markov_attack(inst)
    report = verify_attack(inst, result, 1, seed=5, q_bounds=bounds)
    assert report.passes == 1


def test_verification_full_run(rng):
    inst = _random_instance(rng, n_states=2, horizon=2, iota=0.2)
    result, bounds = solve_markov_attack(inst)
    report = verify_attack(inst, result, 500, seed=17, q_bounds=bounds)
    assert report.passes == 500
    assert report.worst_margin >= -1e-9
    assert report.sandwich_worst_slack >= -1e-6
    assert report.dual_worst_slack >= -1e-6


def test_verification_threads_match_serial(rng):
    inst = _random_instance(rng, iota=0.15)
    result, bounds = solve_markov_attack(inst)
    serial = verify_attack(inst, result, 60, seed=3, q_bounds=bounds, threads=1)
    threaded = verify_attack(inst, result, 60, seed=3, q_bounds=bounds, threads=4)
    assert serial.worst_margin == pytest.approx(threaded.worst_margin, abs=0)


def test_verification_catches_tampering(rng):
    inst = _random_instance(rng, iota=0.2)
    result, bounds = solve_markov_attack(inst)
    tampered_mle = result.poisoned_mle.copy()
    s0 = 0
    tgt_cell = inst.target.joint_indices[0, s0]
    tampered_mle[0, 0, s0, tgt_cell] -= 2 * inst.iota + 4 * inst.widths.rho_r.max()
    from dataclasses import replace
    bad = replace(result, poisoned_mle=tampered_mle)
    with pytest.raises(VerificationFailure):
        verify_attack(inst, bad, 200, seed=9)


def test_uniqueness_sweep_on_enumerable_shape(rng):
    inst = _random_instance(rng, n_states=1, horizon=2, iota=0.3)
    assert inst.shape.n_deterministic_policies <= 64
    result, bounds = solve_markov_attack(inst)
    report = verify_attack(inst, result, 30, seed=2, q_bounds=bounds)
    assert report.uniqueness_checked
    assert report.alternatives_rejected == inst.shape.n_deterministic_policies - 1


def test_infeasible_margin_raises(rng):
    inst = _random_instance(rng, rho_r=0.3, iota=1.95)
    with pytest.raises(Infeasible):
        solve_markov_attack(inst)


def test_bound_cap_fallback_in_gap_regime(rng):
    # between the plain frontier 2b-2H*rho and the condition 2b-(H+1)*rho
    inst = _random_instance(rng, n_states=2, horizon=2, n_per_cell=1,
                            rho_r=0.3, rho_p=0.1, iota=0.9)
    assert markov_feasibility_condition(inst)
    assert solve(build_markov_attack_lp(inst, "dual")).status == "infeasible"
    result, bounds = solve_markov_attack(inst)
    assert result.certificate["lp_mode"] == "bound_cap"
    report = verify_attack(inst, result, 150, seed=21, q_bounds=bounds)
    assert report.passes == 150
