"""Error taxonomy mapped to CLI exit codes."""

from __future__ import annotations

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_PROVIDER = 3
EXIT_DATA = 4


class EngineError(Exception):
    """Base class; subclasses pin the process exit code."""

    exit_code = 1


class ConfigError(EngineError):
    exit_code = EXIT_CONFIG


class ProviderError(EngineError):
    exit_code = EXIT_PROVIDER


class DataError(EngineError):
    exit_code = EXIT_DATA
