"""Exception and warning types shared across the package."""

from __future__ import annotations


class ConfigError(ValueError):
    """One or more configuration invariants are violated.

    ``problems`` holds one human-readable entry per violated invariant.
    """

    def __init__(self, problems: list[str]):
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


class OutOfRange(ConfigError):
    def __init__(self, field: str, value, bounds: str):
        self.field = field
        super().__init__([f"OutOfRange({field}): {value!r} not in {bounds}"])


class WorstCaseInfeasible(ValueError):
    """Fewer files than users, so distinct demands cannot be formed."""


class WorstCaseInfeasibleWarning(UserWarning):
    pass


class DomainError(ValueError):
    pass


class NotTwoRelay(ValueError):
    pass


class DegenerateWarning(UserWarning):
    pass


class InvariantViolation(RuntimeError):
    """Internal consistency failure; the CLI maps it to exit code 2."""


class InconsistentPlacement(InvariantViolation):
    pass


class CyclicDependency(InvariantViolation):
    pass


class DecodeFailure(InvariantViolation):
    def __init__(self, node: str, missing: list[str]):
        self.node = node
        self.missing = list(missing)
        shown = ", ".join(self.missing[:8])
        more = "" if len(self.missing) <= 8 else f" (+{len(self.missing) - 8} more)"
        super().__init__(f"{node} cannot decode: {shown}{more}")
