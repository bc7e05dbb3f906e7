"""Exception types shared across the package.

The CLI maps ConfigurationError/ParameterError/IngestionError to exit
code 2 and TrainingError (plus anything else raised at runtime) to 3.
"""


class ParameterError(ValueError):
    """An operation was called with arguments outside its precondition."""


class ConfigurationError(ValueError):
    """An experiment or workflow configuration is invalid."""


class IngestionError(ValueError):
    """A data file or recording could not be parsed or windowed."""


class TrainingError(RuntimeError):
    """Training produced a non-finite loss or gradient."""
