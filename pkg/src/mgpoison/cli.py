"""Command-line front end.

Subcommands: gen (datasets), attack (poison a dataset), verify (sample
plausible games against a poisoned dataset), bounds (cost brackets), and
learn (run the simulated learner).  Exit codes are a stable contract:
0 success, 2 bad configuration, 3 infeasible attack, 4 coverage violation,
5 verification/learning check failure.  All reports embed the resolved
configuration and seed, and all files are written atomically.
"""

from __future__ import annotations

import argparse
import json
import math
import sys

import numpy as np

from . import confidence, costs, datasets, game, learners
from .bandit import BanditAttackInstance, solve_bandit_attack
from .errors import (EmptySet, Infeasible, InvalidDelta, InvalidMargin,
                     MgPoisonError, NoEquilibrium, NumericalFailure,
                     UncoveredCell, VerificationFailure)
from .game import GameShape, JointPolicy, OfflineDataset
from .markov import (MarkovAttackInstance, markov_feasibility_condition,
                     q_ci_bounds, solve_markov_attack, verify_attack)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_INFEASIBLE = 3
EXIT_COVERAGE = 4
EXIT_VERIFY = 5


def _write_json(path: str, payload: dict) -> None:
    game._atomic_write(path, json.dumps(payload, indent=2, allow_nan=True) + "\n")


def _load_target(spec: str, shape: GameShape) -> JointPolicy:
    if spec == "all-zeros":
        return JointPolicy.constant(shape, (0,) * shape.n_players)
    with open(spec) as fh:
        table = json.load(fh)
    return JointPolicy(shape, np.asarray(table, dtype=np.int64))


def _build_widths(args, dataset: OfflineDataset, bound: float) -> confidence.ConfidenceWidths:
    counts = game.visit_counts(dataset)
    if args.width_mode == "hoeffding":
        if args.delta is None:
            raise SystemExit(_config_error("--delta is required with hoeffding widths"))
        return confidence.hoeffding_widths(counts, dataset.shape, bound, args.delta)
    if args.width_mode == "matched":
        if args.delta is None:
            raise SystemExit(_config_error("--delta is required with matched widths"))
        return confidence.povi_matched_widths(counts, dataset.shape, args.delta,
                                              c=args.bonus_scale)
    if args.rho_r is None:
        raise SystemExit(_config_error("--rho-r is required with constant widths"))
    return confidence.constant_widths(dataset.shape, args.rho_r, args.rho_p)


def _config_error(message: str) -> int:
    print(f"error: {message}", file=sys.stderr)
    return EXIT_CONFIG


def _load_inputs(args) -> tuple[OfflineDataset, float]:
    return game.load_dataset(args.data, args.header)


def _width_config(args) -> dict:
    return {
        "width_mode": args.width_mode,
        "delta": getattr(args, "delta", None),
        "rho_r": getattr(args, "rho_r", None),
        "rho_p": getattr(args, "rho_p", None),
    }


# ---------------------------------------------------------------------------
# Subcommands.
# ---------------------------------------------------------------------------

def _cmd_gen(args) -> int:
    if args.family == "section3":
        counts = datasets.SKEWED_COUNTS if args.skewed else None
        dataset = datasets.demo_game_dataset(args.N, args.b, counts)
        bound = args.b
    elif args.family == "worst-case":
        instance = costs.worst_case_instance(args.n, args.A, args.S, args.H,
                                             args.N, args.b, args.rho, args.iota)
        dataset, bound = instance.dataset, args.b
    elif args.family == "random":
        dataset = datasets.random_dataset(args.n, args.A, args.S, args.H,
                                          args.K, args.b, args.seed)
        bound = args.b
    else:  # pragma: no cover - argparse restricts choices
        return _config_error(f"unknown family {args.family}")
    game.save_dataset(dataset, f"{args.out}.jsonl", f"{args.out}.header.json", bound)
    counts = game.visit_counts(dataset)
    print(f"wrote {dataset.n_episodes} episodes "
          f"(min/max cell count {counts.n_min}/{counts.n_max}) to {args.out}.jsonl")
    return EXIT_OK


def _cmd_attack(args) -> int:
    dataset, bound = _load_inputs(args)
    shape = dataset.shape
    target = _load_target(args.target, shape)
    widths = _build_widths(args, dataset, bound)
    config = {
        "command": "attack", "iota": args.iota, "b": bound, "seed": args.seed,
        "learner": args.learner, **_width_config(args),
    }

    bandit_shaped = shape.horizon == 1 and shape.n_states == 1
    if args.learner == "mle" and not bandit_shaped:
        return _config_error("the mle learner model applies only to "
                             "single-state single-period datasets")
    if bandit_shaped:
        instance = BanditAttackInstance(dataset, tuple(int(a) for a in target.actions[0, 0]),
                                        widths, args.iota, bound)
        result = solve_bandit_attack(instance, args.learner)
        report = {
            "mode": result.mode, "cost": result.cost, "status": "optimal",
            "mle_after": result.poisoned_mle.tolist(),
            "margins": result.certificate["margins"],
            "seed": args.seed, "config": config,
            "rho_r": widths.rho_r.tolist(), "rho_p": None,
        }
    else:
        instance = MarkovAttackInstance(dataset, target, widths, args.iota, bound)
        try:
            result, _ = solve_markov_attack(instance)
        except Infeasible:
            H = dataset.shape.horizon
            threshold = 2 * bound - (H + 1) * widths.rho_r
            violated = np.argwhere(args.iota > threshold + 1e-12)
            _write_json(args.out_report, {
                "status": "infeasible", "config": config,
                "violated_cells": [tuple(int(x) for x in cell) for cell in violated],
            })
            print("error: attack infeasible; margin exceeds the width budget "
                  f"at {len(violated)} cells", file=sys.stderr)
            return EXIT_INFEASIBLE
        report = {
            "mode": result.mode, "cost": result.cost, "status": "optimal",
            "mle_after": result.poisoned_mle.tolist(),
            "margins": result.certificate["worst_margin"],
            "q_lower": result.certificate["q_lower"],
            "q_upper": result.certificate["q_upper"],
            "lp_mode": result.certificate["lp_mode"],
            "clip_binding_cells": result.certificate["clip_binding_cells"],
            "seed": args.seed, "config": config,
            "rho_r": widths.rho_r.tolist(),
            "rho_p": None if widths.rho_p is None else widths.rho_p.tolist(),
        }
    poisoned = dataset.replace_rewards(result.poisoned_rewards)
    game.save_dataset(poisoned, args.out_data, f"{args.out_data}.header.json", bound)
    _write_json(args.out_report, report)
    print(f"attack cost {result.cost:.6g}; poisoned dataset at {args.out_data}")
    return EXIT_OK


def _cmd_verify(args) -> int:
    dataset, bound = _load_inputs(args)
    target = _load_target(args.target, dataset.shape)
    widths = _build_widths(args, dataset, bound)
    instance = MarkovAttackInstance(dataset, target, widths, args.iota, bound)
    from .bandit import AttackResult
    result = AttackResult(
        mode="verify", poisoned_rewards=dataset.rewards,
        poisoned_mle=instance.mle_rewards, cost=0.0, certificate={})
    bounds_tables = q_ci_bounds(instance.mle_rewards, instance.mle_transitions,
                                widths, target, bound, clip=False)
    config = {"command": "verify", "iota": args.iota, "b": bound,
              "samples": args.samples, "seed": args.seed, **_width_config(args)}
    try:
        report = verify_attack(instance, result, args.samples, args.seed,
                               q_bounds=bounds_tables)
    except VerificationFailure as exc:
        _write_json(args.out_report, {
            "config": config, "status": "failed", "detail": str(exc),
            "offending_game": exc.game_payload,
        })
        print(f"verification FAILED: {exc}", file=sys.stderr)
        return EXIT_VERIFY
    _write_json(args.out_report, {
        "config": config, "status": "passed", "verify": report.to_json_dict(),
    })
    print(f"verification passed: {report.passes}/{report.samples} samples, "
          f"worst margin {report.worst_margin:.6g}")
    return EXIT_OK


def _cmd_bounds(args) -> int:
    dataset, bound = _load_inputs(args)
    target = _load_target(args.target, dataset.shape)
    widths = _build_widths(args, dataset, bound)
    instance = MarkovAttackInstance(dataset, target, widths, args.iota, bound)
    report = costs.cost_bounds(instance)
    payload = {
        "config": {"command": "bounds", "iota": args.iota, "b": bound,
                   **_width_config(args)},
        "feasibility_condition": markov_feasibility_condition(instance),
        "bounds": report.to_json_dict(),
    }
    _write_json(args.out_report, payload)
    print(f"cost bounds written to {args.out_report}")
    return EXIT_OK


def _cmd_learn(args) -> int:
    dataset, bound = _load_inputs(args)
    spec = learners.BonusSpec(args.bonus, delta=args.delta, c=args.bonus_scale)
    config = {"command": "learn", "bonus": args.bonus, "delta": args.delta,
              "c": args.bonus_scale, "b": bound}
    try:
        output = learners.povi(dataset, spec, bound)
    except NoEquilibrium as exc:
        _write_json(args.out_report, {"config": config, "status": "failed",
                                      "detail": str(exc)})
        print(f"learner failed: {exc}", file=sys.stderr)
        return EXIT_VERIFY
    counts = game.visit_counts(dataset)
    widths = confidence.povi_matched_widths(counts, dataset.shape,
                                            args.delta, c=args.bonus_scale)
    a1_ok, slack = learners.check_assumption_a1(output.gamma, widths, output.v_lower)
    statuses = [list(row) for row in output.ne_status]
    payload = {
        "config": config,
        "policy": output.policy.actions.tolist(),
        "ne_status": statuses,
        "assumption_compatible": bool(a1_ok),
        "assumption_worst_slack": float(slack.min()),
    }
    ok = all(s in ("strict_dse", "pure_ne") for row in statuses for s in row)
    if args.target is not None:
        target = _load_target(args.target, dataset.shape)
        matches = bool(np.array_equal(output.policy.actions, target.actions))
        payload["matches_target"] = matches
        ok = ok and matches
    payload["status"] = "passed" if ok else "failed"
    _write_json(args.out_report, payload)
    print(f"learned policy {'matches' if ok else 'DOES NOT match'} expectations")
    return EXIT_OK if ok else EXIT_VERIFY


# ---------------------------------------------------------------------------
# Argument parsing.
# ---------------------------------------------------------------------------

def _add_width_arguments(parser) -> None:
    parser.add_argument("--width-mode", choices=("hoeffding", "constant", "matched"),
                        required=True)
    parser.add_argument("--delta", type=float, default=None,
                        help="confidence level for count-based widths")
    parser.add_argument("--rho-r", type=float, default=None,
                        help="constant reward half-width")
    parser.add_argument("--rho-p", type=float, default=0.0,
                        help="constant transition half-width")
    parser.add_argument("--bonus-scale", type=float, default=1.0,
                        help="log-term scale for matched widths")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mgpoison",
        description="Minimal-L1 reward poisoning of offline multi-agent RL datasets.")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen", help="generate a dataset")
    gen.add_argument("--family", choices=("worst-case", "section3", "random"),
                     required=True)
    gen.add_argument("--out", required=True, help="output path prefix")
    gen.add_argument("--n", type=int, default=2)
    gen.add_argument("--A", type=int, default=2)
    gen.add_argument("--S", type=int, default=1)
    gen.add_argument("--H", type=int, default=1)
    gen.add_argument("--N", type=int, default=1, help="episodes per cell")
    gen.add_argument("--K", type=int, default=None, help="episodes (random family)")
    gen.add_argument("--b", type=float, required=True)
    gen.add_argument("--rho", type=float, default=0.1, help="worst-case reward width")
    gen.add_argument("--iota", type=float, default=0.05, help="worst-case margin")
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--skewed", action="store_true",
                     help="section3: counts that break the per-learner reduction")
    gen.set_defaults(func=_cmd_gen)

    attack = sub.add_parser("attack", help="solve the poisoning problem")
    attack.add_argument("--data", required=True)
    attack.add_argument("--header", required=True)
    attack.add_argument("--target", required=True,
                        help='policy JSON (H x S x n table) or "all-zeros"')
    attack.add_argument("--iota", type=float, required=True)
    attack.add_argument("--learner", choices=("mle", "confidence_bound"),
                        default="confidence_bound")
    attack.add_argument("--seed", type=int, default=0)
    attack.add_argument("--out-data", required=True)
    attack.add_argument("--out-report", required=True)
    _add_width_arguments(attack)
    attack.set_defaults(func=_cmd_attack)

    verify = sub.add_parser("verify", help="sample plausible games and certify")
    verify.add_argument("--data", required=True, help="poisoned dataset")
    verify.add_argument("--header", required=True)
    verify.add_argument("--target", required=True)
    verify.add_argument("--iota", type=float, required=True)
    verify.add_argument("--samples", type=int, default=500)
    verify.add_argument("--seed", type=int, default=0)
    verify.add_argument("--out-report", required=True)
    _add_width_arguments(verify)
    verify.set_defaults(func=_cmd_verify)

    bounds = sub.add_parser("bounds", help="cost brackets for an instance")
    bounds.add_argument("--data", required=True)
    bounds.add_argument("--header", required=True)
    bounds.add_argument("--target", required=True)
    bounds.add_argument("--iota", type=float, required=True)
    bounds.add_argument("--out-report", required=True)
    _add_width_arguments(bounds)
    bounds.set_defaults(func=_cmd_bounds)

    learn = sub.add_parser("learn", help="run the simulated learner")
    learn.add_argument("--data", required=True)
    learn.add_argument("--header", required=True)
    learn.add_argument("--bonus", choices=("pessimistic", "optimistic", "zero"),
                       required=True)
    learn.add_argument("--delta", type=float, required=True)
    learn.add_argument("--bonus-scale", type=float, default=1.0)
    learn.add_argument("--target", default=None,
                       help="optional policy the learner is expected to adopt")
    learn.add_argument("--out-report", required=True)
    learn.set_defaults(func=_cmd_learn)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UncoveredCell as exc:
        print(f"error: dataset violates full coverage; {exc}", file=sys.stderr)
        return EXIT_COVERAGE
    except Infeasible as exc:
        print(f"error: attack infeasible; {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except VerificationFailure as exc:
        print(f"error: verification failed; {exc}", file=sys.stderr)
        return EXIT_VERIFY
    except (InvalidDelta, InvalidMargin, EmptySet, ValueError, OSError,
            json.JSONDecodeError) as exc:
        return _config_error(str(exc))
    except NumericalFailure as exc:
        print(f"error: numerical failure; {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE


if __name__ == "__main__":
    sys.exit(main())
