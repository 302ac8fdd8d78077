"""
Exception hierarchy for the P2P market engine
"""
from typing import Any, List, Optional


class MarketError(Exception):
    """Base class for every error raised by the market engine"""


# Market model

class DuplicateIdError(MarketError):
    """Two prosumers share the same id"""


class NonBipartiteEdgeError(MarketError):
    """An edge joins two prosumers of the same role"""


class DanglingEdgeError(MarketError):
    """An edge references a prosumer that does not exist"""


class WeightOnNonEdgeError(MarketError):
    """A trade weight is attached to a pair that is not an edge"""


class MissingPairError(MarketError):
    """A trade vector does not cover every neighbor of a prosumer"""


# Analytic clearing

class EmptySetError(MarketError):
    """An oracle was called with no prosumers"""


class NoRootError(MarketError):
    """The aggregate response never changes sign"""


class RankDeficientError(MarketError):
    """The weighted totals system lost rank"""


class InteriorAssumptionError(MarketError):
    """The weighted totals system is inconsistent, the optimum is not interior"""

    def __init__(self, message: str, residual: float):
        super().__init__(message)
        self.residual = residual


class TooLargeError(MarketError):
    """The enumeration oracle was given more edges than it accepts"""


class NoKktPointError(MarketError):
    """No active set produced a KKT point"""


class ClearingInvariantError(MarketError):
    """A clearing result broke one of its structural invariants"""


# ADMM engine

class NonFiniteInputError(MarketError):
    """NaN or infinity reached the projection step"""


class SingularSystemError(MarketError):
    """The (L + Gamma) system could not be factorised"""


class InvalidConfigError(ValueError):
    """ADMM parameters violate the proximal convergence conditions"""


class MaxIterExceeded(MarketError):
    """The iteration cap was reached before both residuals met tolerance"""

    def __init__(self, message: str, solution: Any = None):
        super().__init__(message)
        self.solution = solution


# Decentralized simulation

class InnerDivergenceError(MarketError):
    """The Jacobi inner loop grew instead of contracting"""


class ProtocolViolationError(MarketError):
    """A message was addressed to a prosumer that is not a neighbor"""


# Learning

class NotConvergedInRounds(MarketError):
    """Learning ran out of rounds before every learner traded"""

    def __init__(self, message: str, outcome: Any = None):
        super().__init__(message)
        self.outcome = outcome


class VolumeRegressionError(MarketError):
    """Boosting volume shrank the trade of an interior prosumer"""

    def __init__(self, message: str, regressions: Any = None, outcome: Any = None):
        super().__init__(message)
        self.regressions = regressions
        self.outcome = outcome


# Scenarios

class ScenarioParseError(MarketError):
    """A scenario document could not be parsed"""

    def __init__(self, message: str, line: Optional[int] = None,
                 column: Optional[int] = None, field: Optional[str] = None):
        super().__init__(message)
        self.line = line
        self.column = column
        self.field = field


class ScenarioValidationError(MarketError):
    """A parsed scenario failed validation"""

    def __init__(self, errors: List[Any]):
        self.errors = list(errors)
        summary = "; ".join(f"{e.field}: {e.message}" for e in self.errors[:5])
        super().__init__(f"Scenario validation failed: {summary}")


class RangeError(MarketError):
    """A feeder generation range is empty or non-positive"""


class EmptyFeasibleIntervalError(MarketError):
    """Ramp limits and box bounds do not intersect"""
