"""Exception hierarchy shared by every module of the package."""


class EnKFLabError(Exception):
    """Base class for all errors raised by enkf1d."""


class ZeroParameter(EnKFLabError, ValueError):
    pass


class NegativeVariance(EnKFLabError, ValueError):
    pass


class NegativeInput(EnKFLabError, ValueError):
    pass


class StageMismatch(EnKFLabError, ValueError):
    pass


class InvalidRange(EnKFLabError, ValueError):
    pass


class TooFewParticles(EnKFLabError, ValueError):
    pass


class DimensionTooSmall(EnKFLabError, ValueError):
    pass


class InvalidDof(EnKFLabError, ValueError):
    pass


class NegativeNoncentrality(EnKFLabError, ValueError):
    pass


class NonIntegrable(EnKFLabError, ValueError):
    pass


class MissingKalmanTrack(EnKFLabError, ValueError):
    pass


class ConditionViolated(EnKFLabError):
    """The tilt function does not satisfy the contraction condition."""


class InsufficientData(EnKFLabError, ValueError):
    pass


class InsufficientGrid(EnKFLabError, ValueError):
    pass


class HookDisabled(EnKFLabError):
    """An experiment needs logged noises but the run did not record them."""


class UnknownExperiment(EnKFLabError, KeyError):
    pass


class ConfigError(EnKFLabError, ValueError):
    pass
