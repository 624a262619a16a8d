"""Exception types raised across the package."""

from sklearn.exceptions import NotFittedError


class KensError(Exception):
    """Base class for all package errors."""


class TripleParseError(KensError, ValueError):
    def __init__(self, path, lineno, line, expected=3):
        self.path = str(path)
        self.lineno = lineno
        self.line = line
        super().__init__(
            f"{self.path}:{lineno}: expected {expected} tab-separated fields, "
            f"got {len(line.split(chr(9)))}: {line!r}"
        )


class EmptyGraphError(KensError, ValueError):
    pass


class UnknownEntityError(KensError, KeyError):
    def __init__(self, ids):
        self.ids = list(ids)
        super().__init__(f"unresolvable entity IDs: {', '.join(map(repr, self.ids))}")

    def __str__(self):
        return self.args[0]


class ConfigError(KensError, ValueError):
    """Invalid configuration; ``field`` names the offending entry."""

    def __init__(self, field, message):
        self.field = field
        self.message = message
        super().__init__(f"{field}: {message}")


class SamplingError(KensError, RuntimeError):
    pass


class TrainingDivergedError(KensError, FloatingPointError):
    pass


class SimilarityError(KensError, ValueError):
    pass


class MetricError(KensError, ValueError):
    pass


__all__ = [
    "KensError",
    "TripleParseError",
    "EmptyGraphError",
    "UnknownEntityError",
    "ConfigError",
    "SamplingError",
    "TrainingDivergedError",
    "SimilarityError",
    "MetricError",
    "NotFittedError",
]
