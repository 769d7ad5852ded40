"""Exception hierarchy.

The CLI maps the three top-level families onto exit codes:
ConfigError -> 2, DataError -> 3, NumericError -> 4.
"""


class SignbalError(Exception):
    pass


class ConfigError(SignbalError, ValueError):
    pass


class DataError(SignbalError, ValueError):
    pass


class NumericError(SignbalError, ArithmeticError):
    pass


class MalformedLine(DataError):
    def __init__(self, lineno, line=""):
        self.lineno = lineno
        super().__init__(f"malformed edge-list line {lineno}: {line!r}")


class DuplicateEdge(DataError):
    pass


class SelfLoop(DataError):
    pass


class ZeroRating(DataError):
    pass


class EmptyGraph(DataError):
    pass


class GraphTooLarge(DataError):
    pass


class TooManyEdges(DataError):
    pass


class BudgetExceedsEdges(DataError):
    pass


class DimensionMismatch(DataError):
    pass


class TopologyMismatch(DataError):
    pass


class SupportMismatch(DataError):
    pass


class ShapeMismatch(DataError):
    pass


class LengthMismatch(DataError):
    pass


class SingleClass(DataError):
    pass


class DegenerateDenominator(NumericError):
    pass


class NonFinite(NumericError):
    pass


class NonFiniteLoss(NonFinite):
    pass
