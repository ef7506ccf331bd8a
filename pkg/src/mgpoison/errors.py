"""Exception types shared across the package."""

from __future__ import annotations


class MgPoisonError(Exception):
    """Base class for all mgpoison errors."""


class UncoveredCell(MgPoisonError):
    """The dataset is missing at least one (period, state, joint action) cell."""

    def __init__(self, cells):
        self.cells = list(cells)
        preview = ", ".join(f"(h={h}, s={s}, a={tuple(a)})" for h, s, a in self.cells[:5])
        more = "" if len(self.cells) <= 5 else f" and {len(self.cells) - 5} more"
        super().__init__(f"uncovered cells: {preview}{more}")


class InvalidDelta(MgPoisonError):
    """Confidence level outside (0, 1)."""


class InvalidMargin(MgPoisonError):
    """Margin too large for the reward bound (no count can make the attack feasible)."""


class EmptySet(MgPoisonError):
    """A confidence interval is empty after clipping to the reward bounds."""


class Infeasible(MgPoisonError):
    """The attack problem admits no solution."""


class NumericalFailure(MgPoisonError):
    """The LP solver could not complete reliably (pivot limit or singular basis)."""


class NoEquilibrium(MgPoisonError):
    """The learner found no pure equilibrium in some stage game."""

    def __init__(self, period: int, state: int):
        self.period = period
        self.state = state
        super().__init__(f"no pure equilibrium at period {period}, state {state}")


class VerificationFailure(MgPoisonError):
    """A sampled plausible game does not admit the target as its equilibrium."""

    def __init__(self, message: str, game_payload=None):
        self.game_payload = game_payload
        super().__init__(message)
