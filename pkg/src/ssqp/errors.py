"""Exception hierarchy."""


class SsqpError(Exception):
    pass


class DimensionMismatch(SsqpError, ValueError):
    pass


class NonFiniteValue(SsqpError, ValueError):
    pass


class TolTooLarge(SsqpError, ValueError):
    pass


class NoExactOracle(SsqpError):
    pass


class InvalidStepSize(SsqpError, ValueError):
    pass


class TooLarge(SsqpError, ValueError):
    pass


class EgmfcqFailure(SsqpError):
    """Constraint relaxation fell below ``theta_min``; restart elsewhere."""

    def __init__(self, msg, iteration=None):
        super().__init__(msg)
        self.iteration = iteration


class QpFailure(SsqpError):
    def __init__(self, msg, status=None, iteration=None):
        super().__init__(msg)
        self.status = status
        self.iteration = iteration


class NoConvergence(SsqpError):
    pass


class EmptyAccumulator(SsqpError):
    pass


class SingularH(SsqpError):
    pass


class NoAnalyticMoments(SsqpError):
    pass


class NoAnalyticSolution(SsqpError):
    pass


class DomainError(SsqpError, ValueError):
    pass


class NegativeVariance(SsqpError, ValueError):
    pass


class NotPositiveDefinite(SsqpError, ValueError):
    pass


class InvalidTrueParameter(SsqpError, ValueError):
    pass


class InfeasibleGrossBound(SsqpError, ValueError):
    pass


class UnknownBenchmark(SsqpError, KeyError):
    pass


class EmptyRecords(SsqpError, ValueError):
    pass


class EmptySeries(SsqpError, ValueError):
    pass


class NaNGuard(SsqpError, ArithmeticError):
    """A metric is undefined (zero dispersion or a single observation)."""


class IntervalUndefined(SsqpError):
    pass


class ReturnsFileError(SsqpError, ValueError):
    pass


class EmptyFile(ReturnsFileError):
    pass


class RaggedRows(ReturnsFileError):
    def __init__(self, msg, line=None):
        super().__init__(msg)
        self.line = line


class NonNumericCell(ReturnsFileError):
    def __init__(self, msg, row=None, col=None):
        super().__init__(msg)
        self.row = row
        self.col = col


class ConfigError(SsqpError, ValueError):
    def __init__(self, msg, key=None):
        super().__init__(msg)
        self.key = key
