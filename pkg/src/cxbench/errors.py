"""Exception hierarchy shared across the package.

Every error carries a short machine-readable ``code`` so the CLI can map
failures to exit codes without string matching.
"""


class CxBenchError(Exception):
    code = "error"


class DataError(CxBenchError):
    code = "data"


class MissingFileError(DataError):
    code = "missing_file"


class MissingColumnError(DataError):
    code = "missing_column"


class NoUsableRowsError(DataError):
    code = "no_rows"


class ConstantTargetError(DataError):
    code = "constant_target"


class TooFewRowsError(DataError):
    code = "too_few_rows"


class DimensionError(CxBenchError, ValueError):
    code = "dimension"


class ModelFormatError(CxBenchError):
    """Raised when a serialized classifier cannot be read back.

    ``field`` names the offending entry when the problem is local to one.
    """

    code = "model_format"

    def __init__(self, message, field=None):
        super().__init__(message if field is None else f"{field}: {message}")
        self.field = field


class ConfigError(CxBenchError):
    code = "config"
