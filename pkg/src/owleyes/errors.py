"""Exception hierarchy.  Every class carries the CLI exit code it maps to."""


class OwlEyesError(Exception):
    exit_code = 1


class DimensionError(OwlEyesError, ValueError):
    exit_code = 4


class ConfigError(OwlEyesError, ValueError):
    exit_code = 4


class NumericError(OwlEyesError, ArithmeticError):
    exit_code = 5


class CheckpointError(OwlEyesError):
    exit_code = 4


class MagicMismatchError(CheckpointError):
    pass


class VersionMismatchError(CheckpointError):
    pass


class TruncatedCheckpointError(CheckpointError):
    pass


class HierarchyParseError(OwlEyesError, ValueError):
    exit_code = 4


class NoCandidateError(OwlEyesError, LookupError):
    exit_code = 4


class ManifestError(OwlEyesError, ValueError):
    exit_code = 4


class GraphValidationError(OwlEyesError, ValueError):
    exit_code = 4

    def __init__(self, message, offenders=()):
        super().__init__(message)
        self.offenders = list(offenders)
