"""Exception types raised across the package."""


class SparseDepthError(Exception):
    """Base class for all package errors."""


class FormatError(SparseDepthError, ValueError):
    """A file on disk is missing, truncated or malformed."""

    def __init__(self, path, reason):
        self.path = str(path)
        self.reason = reason
        super().__init__(f"{self.path}: {reason}")


class DegenerateSceneError(SparseDepthError, ValueError):
    pass


class UndefinedMetricError(SparseDepthError, ValueError):
    pass


class ConfigError(SparseDepthError, ValueError):
    pass


class NonFiniteLossError(SparseDepthError, RuntimeError):
    def __init__(self, name, step=None):
        self.name = name
        self.step = step
        where = "" if step is None else f" at step {step}"
        super().__init__(f"non-finite value for loss {name!r}{where}")


class UnknownImageError(SparseDepthError, KeyError):
    pass
