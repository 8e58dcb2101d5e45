"""Exception types shared across the package."""


class InvalidInputError(ValueError):
    """Arguments violate a precondition (shape, range, missing class)."""


class FormatError(ValueError):
    """A binary file could not be decoded.

    ``offset`` is the byte position at which decoding failed.
    """

    def __init__(self, message, offset):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


class VersionMismatchError(FormatError):
    pass


class ConfigError(ValueError):
    """Bad run configuration; ``key`` and ``line`` locate the problem."""

    def __init__(self, message, key=None, line=None):
        where = []
        if key is not None:
            where.append(f"key {key!r}")
        if line is not None:
            where.append(f"line {line}")
        suffix = f" ({', '.join(where)})" if where else ""
        super().__init__(message + suffix)
        self.key = key
        self.line = line


class TrainingDivergedError(RuntimeError):
    """Objective became non-finite; ``state`` holds the last training state."""

    def __init__(self, message, state=None, stage=None):
        if stage is not None:
            message = f"stage {stage}: {message}"
        super().__init__(message)
        self.state = state
        self.stage = stage
