"""Error families shared by every app.

Each family carries the process exit code the management commands use when
the error escapes a stage.
"""


class ChronoprefError(Exception):
    exit_code = 1


class ConfigError(ChronoprefError):
    exit_code = 2


class TransportError(ChronoprefError):
    exit_code = 3


class StalenessError(ChronoprefError):
    exit_code = 4


class DataError(ChronoprefError):
    exit_code = 5
