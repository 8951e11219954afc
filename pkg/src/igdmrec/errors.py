"""Exception hierarchy shared by the library and the CLI.

Each class maps to a stable CLI exit code (see ``igdmrec.harness.cli``).
"""


class IGDMError(Exception):
    exit_code = 1


class ConfigError(IGDMError, ValueError):
    exit_code = 2


class DataFormatError(IGDMError, ValueError):
    exit_code = 2


class DimensionError(IGDMError, ValueError):
    exit_code = 2


class NumericalError(IGDMError, FloatingPointError):
    exit_code = 3


class ArtifactMismatch(IGDMError):
    exit_code = 4
