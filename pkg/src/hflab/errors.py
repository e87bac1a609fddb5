"""Shared exception types with CLI exit-code semantics."""


class HflabError(Exception):
    """Base class for package errors."""


class ConfigurationError(HflabError):
    """Invalid or infeasible configuration (CLI exit code 2)."""


class DataError(HflabError):
    """Malformed or missing input data / artifacts (CLI exit code 3)."""


class TrainingDivergedError(HflabError):
    """Non-finite loss encountered during optimization."""
