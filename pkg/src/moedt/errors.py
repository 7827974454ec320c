"""Exception types shared across the package.

Every structured failure raises a subclass of MoedtError so callers can catch
package errors without swallowing programming bugs.
"""


class MoedtError(Exception):
    pass


class ShapeError(MoedtError):
    """An op received operands whose shapes cannot combine."""

    def __init__(self, op: str, *shapes):
        self.op = op
        self.shapes = shapes
        super().__init__(f"{op}: incompatible shapes {', '.join(str(s) for s in shapes)}")


class NonScalarLossError(MoedtError):
    pass


class NumericsError(MoedtError):
    """Non-finite values appeared where the contract forbids them."""


class GradCheckError(MoedtError):
    pass


class FrozenParameterError(MoedtError):
    pass


class MissingMomentError(MoedtError):
    pass


class UnknownComponentError(MoedtError):
    pass


class DuplicateNameError(MoedtError):
    pass


class ConfigError(MoedtError):
    pass


class TaskError(MoedtError):
    pass


class DatasetError(MoedtError):
    pass


class ScoreRangeError(MoedtError):
    pass


class GroupingError(MoedtError):
    pass


class RoutingError(MoedtError):
    pass


class PipelineError(MoedtError):
    pass


class MetricsSchemaError(MoedtError):
    pass


class CheckpointError(MoedtError):
    pass


class CheckpointHashError(CheckpointError):
    pass


class CheckpointTruncatedError(CheckpointError):
    pass


class CheckpointVersionError(CheckpointError):
    pass
