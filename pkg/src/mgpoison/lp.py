"""Minimal sparse LP model and a bounded-variable revised simplex solver.

The solver is a two-phase revised simplex over variables with general
(possibly infinite) bounds.  Constraints are turned into equalities with one
slack per row; the basis inverse is kept dense and updated by rank-one
pivots with periodic refactorization.  Dantzig pricing switches to Bland's
rule after a run of degenerate pivots, which guarantees termination.

Problem sizes here stay at desk scale (a few thousand variables), so dense
linear algebra is deliberate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import NumericalFailure

LESS, EQUAL, GREATER = "<=", "==", ">="

#: No improving reduced cost beyond this tolerance means optimality.
REDUCED_COST_TOL = 1e-9
#: A pivot step shorter than this counts as degenerate.
DEGENERATE_STEP = 1e-12
#: Consecutive degenerate pivots before switching to Bland's rule.
BLAND_TRIGGER = 1000
#: Hard pivot budget; exceeding it raises NumericalFailure.
PIVOT_LIMIT = 50_000
#: Refactorize the basis inverse every this many pivots.
REFACTOR_EVERY = 400
#: Post-solve feasibility tolerance on every constraint.
FEASIBILITY_TOL = 1e-7

_AT_LOWER, _AT_UPPER, _FREE_ZERO, _BASIC = 0, 1, 2, 3


@dataclass
class LpModel:
    """A linear program: minimize objective subject to sparse rows and bounds."""

    variables: list = field(default_factory=list)    # (name, lower, upper)
    constraints: list = field(default_factory=list)  # ([(var, coef), ...], sense, rhs)
    objective: list = field(default_factory=list)    # [(var, coef), ...]

    def add_variable(self, name: str, lower: float = -math.inf,
                     upper: float = math.inf) -> int:
        if lower > upper:
            raise ValueError(f"variable {name}: lower bound exceeds upper bound")
        self.variables.append((name, float(lower), float(upper)))
        return len(self.variables) - 1

    def add_constraint(self, coeffs, sense: str, rhs: float) -> None:
        if sense not in (LESS, EQUAL, GREATER):
            raise ValueError(f"unknown sense {sense!r}")
        row = [(int(j), float(c)) for j, c in coeffs if c != 0.0]
        for j, _ in row:
            if not 0 <= j < len(self.variables):
                raise ValueError(f"constraint references undeclared variable {j}")
        self.constraints.append((row, sense, float(rhs)))

    def add_objective_term(self, var: int, coef: float) -> None:
        self.objective.append((int(var), float(coef)))

    @property
    def n_variables(self) -> int:
        return len(self.variables)

    @property
    def n_constraints(self) -> int:
        return len(self.constraints)


@dataclass(frozen=True)
class LpSolution:
    status: str                      # "optimal" | "infeasible" | "unbounded"
    values: np.ndarray | None        # per declared variable when optimal
    objective_value: float | None
    iterations: int = 0
    duals: np.ndarray | None = None  # per-constraint multipliers at the final basis

    def value_of(self, index: int) -> float:
        return float(self.values[index])


class _Simplex:
    """Working state for one solve; not reusable."""

    def __init__(self, model: LpModel):
        n = model.n_variables
        m = model.n_constraints
        self.m = m
        self.n_struct = n

        lower = np.array([v[1] for v in model.variables], dtype=float)
        upper = np.array([v[2] for v in model.variables], dtype=float)

        # slack bounds encode the constraint sense (row + slack == rhs)
        slack_lower = np.empty(m)
        slack_upper = np.empty(m)
        rhs = np.empty(m)
        dense = np.zeros((m, n + m))
        for r, (row, sense, b) in enumerate(model.constraints):
            for j, c in row:
                dense[r, j] += c
            dense[r, n + r] = 1.0
            rhs[r] = b
            if sense == LESS:
                slack_lower[r], slack_upper[r] = 0.0, math.inf
            elif sense == GREATER:
                slack_lower[r], slack_upper[r] = -math.inf, 0.0
            else:
                slack_lower[r], slack_upper[r] = 0.0, 0.0

        self.A = dense
        self.b = rhs
        self.lower = np.concatenate([lower, slack_lower])
        self.upper = np.concatenate([upper, slack_upper])
        self.cost = np.zeros(n + m)
        for j, c in model.objective:
            self.cost[j] += c
        self.pivots = 0

    # -- basis bookkeeping --------------------------------------------------

    def _nonbasic_value(self, j: int) -> float:
        st = self.status[j]
        if st == _AT_LOWER:
            return self.lower[j]
        if st == _AT_UPPER:
            return self.upper[j]
        return 0.0

    def _values_vector(self) -> np.ndarray:
        x = np.array([self._nonbasic_value(j) for j in range(self.A.shape[1])])
        x[self.basis] = self.x_basic
        return x

    def _refactorize(self) -> None:
        B = self.A[:, self.basis]
        try:
            self.binv = np.linalg.inv(B)
        except np.linalg.LinAlgError as exc:
            raise NumericalFailure("singular basis during refactorization") from exc
        self._recompute_basics()

    def _recompute_basics(self) -> None:
        x = np.array([self._nonbasic_value(j) for j in range(self.A.shape[1])])
        x[self.basis] = 0.0
        self.x_basic = self.binv @ (self.b - self.A @ x)

    # -- setup with artificials ----------------------------------------------

    def prepare(self) -> None:
        n_total = self.A.shape[1]
        self.status = np.empty(n_total, dtype=np.int8)
        for j in range(n_total):
            if np.isfinite(self.lower[j]):
                self.status[j] = _AT_LOWER
            elif np.isfinite(self.upper[j]):
                self.status[j] = _AT_UPPER
            else:
                self.status[j] = _FREE_ZERO

        # slack basis; rows whose slack cannot absorb the residual get an artificial
        x = np.array([self._nonbasic_value(j) for j in range(n_total)])
        for r in range(self.m):
            x[self.n_struct + r] = 0.0
        resid = self.b - self.A @ x

        basis = []
        art_cols = []
        art_rows = []
        for r in range(self.m):
            s = self.n_struct + r
            if self.lower[s] - 1e-12 <= resid[r] <= self.upper[s] + 1e-12:
                basis.append(s)
            else:
                clamp = self.lower[s] if resid[r] < self.lower[s] else self.upper[s]
                self.status[s] = _AT_LOWER if clamp == self.lower[s] else _AT_UPPER
                art_rows.append((r, resid[r] - clamp))
                basis.append(-1)  # placeholder

        if art_rows:
            extra = np.zeros((self.m, len(art_rows)))
            for k, (r, rho) in enumerate(art_rows):
                extra[r, k] = 1.0 if rho > 0 else -1.0
                art_cols.append(n_total + k)
                basis[r] = n_total + k
            self.A = np.hstack([self.A, extra])
            self.lower = np.concatenate([self.lower, np.zeros(len(art_rows))])
            self.upper = np.concatenate([self.upper, np.full(len(art_rows), math.inf)])
            self.cost = np.concatenate([self.cost, np.zeros(len(art_rows))])
            self.status = np.concatenate(
                [self.status, np.full(len(art_rows), _AT_LOWER, dtype=np.int8)])
        self.artificials = np.array(art_cols, dtype=int)
        self.basis = np.array(basis, dtype=int)
        self.status[self.basis] = _BASIC
        self.A_F = np.asfortranarray(self.A)
        norms = np.sqrt((self.A * self.A).sum(axis=0))
        self._col_scale = 1.0 / np.maximum(norms, 1.0)
        self._refactorize()

    # -- core iteration -------------------------------------------------------

    def _price(self, cost: np.ndarray, y: np.ndarray, bland: bool):
        """Select an entering column, or None at optimality.

        Normal mode takes the best norm-scaled reduced cost; Bland mode the
        lowest eligible index (anti-cycling).
        """
        reduced = cost - y @ self.A_F
        movable = (self.status != _BASIC) & (self.upper - self.lower > 0)
        up = movable & (reduced < -REDUCED_COST_TOL) & (
            (self.status == _AT_LOWER) | (self.status == _FREE_ZERO))
        dn = movable & (reduced > REDUCED_COST_TOL) & (
            (self.status == _AT_UPPER) | (self.status == _FREE_ZERO))
        eligible = np.nonzero(up | dn)[0]
        if not eligible.size:
            return None
        if bland:
            q = int(eligible[0])
        else:
            scores = np.abs(reduced[eligible]) * self._col_scale[eligible]
            q = int(eligible[int(scores.argmax())])
        return q, (1.0 if up[q] else -1.0)

    def _iterate(self, cost: np.ndarray) -> str:
        """Run simplex to optimality for the given cost vector."""
        degenerate_run = 0
        bland = False
        since_refactor = 0
        while True:
            if self.pivots > PIVOT_LIMIT:
                raise NumericalFailure(f"pivot limit {PIVOT_LIMIT} exhausted")
            y = self.binv.T @ cost[self.basis]
            picked = self._price(cost, y, bland)
            if picked is None:
                return "optimal"
            q, direction = picked

            w = self.binv @ self.A_F[:, q]
            move = direction * w  # basic values change by -move * step

            ratios = np.full(self.m, math.inf)
            to_lower = move > DEGENERATE_STEP
            to_upper = move < -DEGENERATE_STEP
            if to_lower.any():
                ratios[to_lower] = ((self.x_basic[to_lower]
                                     - self.lower[self.basis[to_lower]]) / move[to_lower])
            if to_upper.any():
                ratios[to_upper] = ((self.x_basic[to_upper]
                                     - self.upper[self.basis[to_upper]]) / move[to_upper])
            min_ratio = float(ratios.min(initial=math.inf))
            flip = self.upper[q] - self.lower[q]

            self.pivots += 1
            since_refactor += 1

            if flip <= min_ratio:
                if not math.isfinite(flip):
                    return "unbounded"
                # bound flip: q crosses its interval, basis unchanged
                self.x_basic = self.x_basic - flip * move
                self.status[q] = _AT_UPPER if self.status[q] == _AT_LOWER else _AT_LOWER
                degenerate_run = 0
                continue

            step = max(min_ratio, 0.0)
            ties = np.nonzero(ratios <= min_ratio + 1e-15)[0]
            if bland:
                leaving = int(ties[np.argmin(self.basis[ties])])
            else:
                leaving = int(ties[np.argmax(np.abs(move[ties]))])
            leave_to = _AT_LOWER if move[leaving] > 0 else _AT_UPPER

            if step <= DEGENERATE_STEP:
                degenerate_run += 1
                if degenerate_run > BLAND_TRIGGER:
                    bland = True
            else:
                degenerate_run = 0

            entering_value = self._nonbasic_value(q) + direction * step
            self.x_basic = self.x_basic - step * move
            out = self.basis[leaving]
            self.status[out] = leave_to
            self.status[q] = _BASIC
            self.basis[leaving] = q

            pivot = w[leaving]
            if abs(pivot) < 1e-11 or since_refactor >= REFACTOR_EVERY:
                self._refactorize()
                since_refactor = 0
            else:
                row = self.binv[leaving] / pivot
                w[leaving] = 0.0  # keep the pivot row out of the rank-1 update
                self.binv -= w[:, None] * row[None, :]
                self.binv[leaving] = row
                self.x_basic[leaving] = entering_value

    def run(self) -> tuple[str, np.ndarray | None, np.ndarray | None]:
        self.prepare()
        if self.artificials.size:
            phase1 = np.zeros(self.A.shape[1])
            phase1[self.artificials] = 1.0
            status = self._iterate(phase1)
            if status != "optimal":
                raise NumericalFailure("phase 1 terminated abnormally")
            infeasibility = float(phase1 @ self._values_vector())
            if infeasibility > FEASIBILITY_TOL:
                return "infeasible", None, None
            # pin artificials at zero for phase 2
            self.lower[self.artificials] = 0.0
            self.upper[self.artificials] = 0.0
        status = self._iterate(self.cost)
        if status == "unbounded":
            return "unbounded", None, None
        duals = self.binv.T @ self.cost[self.basis]
        return "optimal", self._values_vector(), duals


def solve(model: LpModel) -> LpSolution:
    """Solve the model; statuses are optimal/infeasible/unbounded.

    Optimal solutions satisfy every constraint within FEASIBILITY_TOL; a
    violation after termination raises NumericalFailure rather than returning
    a silently wrong answer.
    """
    if model.n_constraints == 0:
        # pure bound-minimization; solve each variable independently
        values = np.zeros(model.n_variables)
        cost = np.zeros(model.n_variables)
        for j, c in model.objective:
            cost[j] += c
        for j, (_, lo, hi) in enumerate(model.variables):
            if cost[j] > 0:
                values[j] = lo
            elif cost[j] < 0:
                values[j] = hi
            else:
                values[j] = min(max(0.0, lo), hi)
            if not math.isfinite(values[j]):
                return LpSolution("unbounded", None, None)
        return LpSolution("optimal", values, float(cost @ values))

    state = _Simplex(model)
    status, full, duals = state.run()
    if status != "optimal":
        return LpSolution(status, None, None, iterations=state.pivots)

    values = full[: model.n_variables]
    _check_feasibility(model, values)
    objective = 0.0
    for j, c in model.objective:
        objective += c * values[j]
    return LpSolution("optimal", values.copy(), float(objective),
                      iterations=state.pivots, duals=duals)


def _check_feasibility(model: LpModel, values: np.ndarray) -> None:
    scale = max(1.0, float(np.abs(values).max(initial=0.0)))
    for j, (name, lo, hi) in enumerate(model.variables):
        if values[j] < lo - FEASIBILITY_TOL * scale or values[j] > hi + FEASIBILITY_TOL * scale:
            raise NumericalFailure(f"variable {name} left its bounds")
    for row, sense, rhs in model.constraints:
        lhs = sum(c * values[j] for j, c in row)
        err = lhs - rhs
        if sense == LESS and err > FEASIBILITY_TOL * scale:
            raise NumericalFailure("constraint violated beyond tolerance")
        if sense == GREATER and err < -FEASIBILITY_TOL * scale:
            raise NumericalFailure("constraint violated beyond tolerance")
        if sense == EQUAL and abs(err) > FEASIBILITY_TOL * scale:
            raise NumericalFailure("constraint violated beyond tolerance")


def dump_mps(model: LpModel, path: str, name: str = "MGPOISON") -> None:
    """Write the model in fixed-column MPS for cross-checking with other solvers.

    Rows: N = objective, L/G/E = constraint senses.  All variable bounds are
    written explicitly in the BOUNDS section.
    """
    lines = [f"NAME          {name}", "ROWS", " N  COST"]
    for r, (_, sense, _) in enumerate(model.constraints):
        tag = {LESS: "L", EQUAL: "E", GREATER: "G"}[sense]
        lines.append(f" {tag}  R{r}")

    by_var: dict[int, list[tuple[str, float]]] = {}
    for j, c in model.objective:
        by_var.setdefault(j, []).append(("COST", c))
    for r, (row, _, _) in enumerate(model.constraints):
        for j, c in row:
            by_var.setdefault(j, []).append((f"R{r}", c))

    lines.append("COLUMNS")
    for j in range(model.n_variables):
        col = f"X{j}"
        for rowname, coef in by_var.get(j, []):
            lines.append(f"    {col:<10}{rowname:<10}{coef:.12g}")

    lines.append("RHS")
    for r, (_, _, rhs) in enumerate(model.constraints):
        if rhs != 0.0:
            lines.append(f"    RHS       R{r:<9d}{rhs:.12g}")

    lines.append("BOUNDS")
    for j, (_, lo, hi) in enumerate(model.variables):
        col = f"X{j}"
        if lo == hi:
            lines.append(f" FX BND       {col:<10}{lo:.12g}")
            continue
        if math.isinf(lo) and math.isinf(hi):
            lines.append(f" FR BND       {col}")
            continue
        if math.isinf(lo):
            lines.append(f" MI BND       {col}")
        elif lo != 0.0:
            lines.append(f" LO BND       {col:<10}{lo:.12g}")
        if not math.isinf(hi):
            lines.append(f" UP BND       {col:<10}{hi:.12g}")
    lines.append("ENDATA")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
