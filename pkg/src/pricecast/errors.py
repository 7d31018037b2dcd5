"""Exception hierarchy shared by every module.

Each class carries a short machine-greppable ``code`` and the CLI exit status
it maps to (1 usage/config, 2 data/schema, 3 numeric failure).
"""


class ForecastError(Exception):
    code = "E_FORECAST"
    exit_status = 2


class ConfigError(ForecastError, ValueError):
    code = "E_CONFIG"
    exit_status = 1


class DimensionError(ForecastError, ValueError):
    code = "E_SHAPE"
    exit_status = 3


class DataError(ForecastError, ValueError):
    code = "E_DATA"
    exit_status = 2


class EmptyDataError(DataError):
    code = "E_EMPTY"


class SplitError(DataError):
    code = "E_SPLIT"


class SchemaError(DataError):
    code = "E_SCHEMA"


class CheckpointError(DataError):
    code = "E_CHECKPOINT"


class UndefinedMetricError(ForecastError, ValueError):
    code = "E_METRIC"
    exit_status = 3


class TrainingError(ForecastError, ArithmeticError):
    code = "E_NUMERIC"
    exit_status = 3
