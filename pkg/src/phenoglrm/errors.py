"""Exception hierarchy. ``exit_code`` is what the CLI returns for each family."""


class PhenoError(Exception):
    exit_code = 1
    # pipeline stage that raised, filled in by the orchestrator
    stage = None


class ConfigError(PhenoError, ValueError):
    """Bad parameters, schema, or configuration."""

    exit_code = 2


class SchemaError(ConfigError):
    pass


class ShapeError(ConfigError):
    pass


class DataError(PhenoError, ValueError):
    """Input data cannot be used as given."""

    exit_code = 3


class IngestionError(DataError):
    def __init__(self, message, row=None):
        if row is not None:
            message = f"row {row}: {message}"
        super().__init__(message)
        self.row = row


class EmptyDatasetError(DataError):
    pass


class NumericalError(PhenoError, ArithmeticError):
    exit_code = 4


class DivergenceError(NumericalError):
    def __init__(self, iteration, value):
        super().__init__(f"objective became non-finite ({value}) at iteration {iteration}")
        self.iteration = iteration


class SweepError(ConfigError):
    pass


class EmptyIntersectionError(ConfigError):
    pass
