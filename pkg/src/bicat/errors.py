"""Exception hierarchy.

``UsageError`` maps to CLI exit code 1; every :class:`DataError` maps to 2.
"""


class BicatError(Exception):
    pass


class UsageError(BicatError):
    pass


class DataError(BicatError):
    pass


class DimensionError(BicatError, ValueError):
    pass


class ProbeError(BicatError):
    pass


class FormatError(DataError):
    pass


class SplitError(DataError, ValueError):
    pass


class SamplingError(DataError):
    pass


class EmptyCorpusError(DataError):
    pass


class LossError(BicatError, ValueError):
    pass


class DivergenceError(BicatError):
    def __init__(self, step, value):
        super().__init__(f"non-finite loss {value!r} at step {step}")
        self.step = step
        self.value = value


class GenerationError(BicatError):
    pass


class AlignmentError(BicatError, ValueError):
    pass


class MetricError(BicatError, ValueError):
    pass


class ProtocolError(BicatError, ValueError):
    pass


class UndefinedConditionalError(DataError, ZeroDivisionError):
    pass


class StageOrderError(DataError):
    pass


class CompatibilityError(DataError):
    pass


class ConfigError(UsageError, ValueError):
    pass
