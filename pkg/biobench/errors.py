"""Exception hierarchy shared by every biobench module."""


class BiobenchError(Exception):
    pass


class DimensionError(BiobenchError, ValueError):
    pass


class ConfigurationError(BiobenchError, ValueError):
    pass


class BuildError(ConfigurationError):
    pass


class NumericError(BiobenchError, ArithmeticError):
    pass


class DivergenceError(NumericError):
    """Non-finite values appeared while training or running a forward pass."""

    def __init__(self, message: str, layer: int | None = None, step: int | None = None):
        super().__init__(message)
        self.layer = layer
        self.step = step


class IngestionError(BiobenchError, OSError):
    pass


class AggregationError(BiobenchError, ValueError):
    def __init__(self, message: str, fields: list[str] | None = None):
        super().__init__(message)
        self.fields = fields or []


class CheckpointError(BiobenchError, ValueError):
    pass
