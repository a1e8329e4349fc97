"""
Exceptions for the sslbench testbed

Every failure raised by the library derives from BenchError so the
management commands can map it onto an exit code:
- 2: configuration errors (ConfigurationError, SchemaVersionError, CheckpointParseError)
- 3: data errors (DataError, ContractError)
- 4: numeric failures (NumericError)
"""


class BenchError(Exception):
    """Base class for all testbed errors"""
    exit_code = 1


# =============================================================================
# CONTRACT ERRORS
# =============================================================================

class ContractError(BenchError):
    """A documented precondition of an operation was violated"""
    exit_code = 3


class ShapeError(ContractError):
    """Array dimensions do not line up"""


class DegenerateInputError(ContractError):
    """Input is well-shaped but numerically degenerate (zero row, zero variance, empty pool)"""


class SingularMatrixError(ContractError):
    """Least-squares design matrix is rank deficient and no ridge fallback was allowed"""


# =============================================================================
# CONFIGURATION / PERSISTENCE ERRORS
# =============================================================================

class ConfigurationError(BenchError):
    """Invalid experiment, SCM or generator configuration"""
    exit_code = 2


class SchemaVersionError(ConfigurationError):
    """Stored schema_version differs from the one this code understands"""

    def __init__(self, found, expected):
        self.found = found
        self.expected = expected
        super().__init__(
            f"schema_version {found!r} is not supported (expected {expected}); "
            f"no migration is registered for this version"
        )


class CheckpointParseError(ConfigurationError):
    """A JSON file could not be parsed"""

    def __init__(self, path, line, column, message):
        self.path = path
        self.line = line
        self.column = column
        super().__init__(f"{path}: line {line} column {column}: {message}")


class DataError(BenchError):
    """Dataset or checkpoint files are missing or inconsistent"""
    exit_code = 3


# =============================================================================
# NUMERIC ERRORS AND SIGNALS
# =============================================================================

class NumericError(BenchError):
    """NaN or infinite value detected"""
    exit_code = 4


class WarmupRequired(BenchError):
    """MoCo queue is not full yet; caller should enqueue target representations first"""
