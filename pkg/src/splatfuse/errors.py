"""Exception hierarchy for splatfuse."""


class SplatfuseError(Exception):
    """Base class for all domain errors raised by the package."""


class BehindCamera(SplatfuseError):
    """A Gaussian centre lies at or behind the near plane."""


class ParseError(SplatfuseError):
    def __init__(self, path, line, message):
        self.path = str(path)
        self.line = line
        super().__init__(f"{self.path}:{line}: {message}")


class MissingAsset(SplatfuseError):
    """A file referenced by the scene description does not exist."""


class UnknownFrame(SplatfuseError):
    pass


class ShapeMismatch(SplatfuseError, ValueError):
    pass


class TooSmall(SplatfuseError, ValueError):
    pass


class EmptyCloud(SplatfuseError, ValueError):
    pass


class MissingRefMask(SplatfuseError):
    pass


class UnknownRefiner(SplatfuseError, KeyError):
    def __str__(self):
        return Exception.__str__(self)


class RefinerFailure(SplatfuseError):
    """Raised when a refiner fails; carries the state of the last completed stage."""

    def __init__(self, message, stage=None, checkpoint=None):
        super().__init__(message)
        self.stage = stage
        self.checkpoint = checkpoint


class CheckpointError(SplatfuseError):
    pass


class ConfigError(SplatfuseError, ValueError):
    pass
