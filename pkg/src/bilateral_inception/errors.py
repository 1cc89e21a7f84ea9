"""Exception hierarchy shared by the library and the CLI.

Each class carries the process exit code the CLI maps it to.
"""


class BilateralInceptionError(Exception):
    exit_code = 1


class InvalidArgumentError(BilateralInceptionError, ValueError):
    exit_code = 2


class FileFormatError(BilateralInceptionError, OSError):
    """Unreadable, missing or malformed input file."""

    exit_code = 3


class ChecksumError(FileFormatError):
    exit_code = 3


class TrainingDivergedError(BilateralInceptionError, FloatingPointError):
    exit_code = 4


class VerificationError(BilateralInceptionError):
    exit_code = 4
