"""Exception hierarchy shared by every stage of the pipeline."""

from __future__ import annotations


class DdtepError(Exception):
    """Base class. Carries an optional source location."""

    def __init__(self, message: str, line: int | None = None, col: int | None = None):
        super().__init__(message)
        self.message = message
        self.line = line
        self.col = col

    def __str__(self) -> str:
        if self.line is None:
            return self.message
        if self.col is None:
            return f"line {self.line}: {self.message}"
        return f"line {self.line}, column {self.col}: {self.message}"


class ProgramError(DdtepError):
    """The program (or dataset, or strategy) is malformed or unusable."""


class LexError(ProgramError):
    pass


class ParseError(ProgramError):
    pass


class HeadRoleError(ProgramError):
    pass


class ProbabilityError(ProgramError):
    pass


class GroundingError(ProgramError):
    pass


class RangeRestrictionError(GroundingError):
    pass


class InstantiationError(GroundingError):
    pass


class UnstratifiedError(GroundingError):
    pass


class StrategyError(ProgramError):
    """Incomplete, ill-formed or inadmissible strategy."""


class ConstraintViolation(StrategyError):
    pass


class NoAdmissibleStrategy(StrategyError):
    pass


class EvidenceError(ProgramError):
    pass


class InconsistentEvidence(EvidenceError):
    pass


class ImpossibleEvidence(EvidenceError):
    pass


class DecisionDependentEvidence(EvidenceError):
    pass


class NothingToLearn(ProgramError):
    pass


class ResourceLimitError(DdtepError):
    """A configured cap (worlds, circuit nodes, strategies) was exceeded."""
