"""Exception hierarchy shared by every module of the toolkit."""


class LevyZvonkinError(Exception):
    """Base class for all toolkit errors."""


class InvalidArgument(LevyZvonkinError, ValueError):
    pass


class OutOfDomain(LevyZvonkinError):
    """A point (or a path) left the region on which a grid field is known."""


class ResolutionError(LevyZvonkinError):
    """The frequency cutoff of a grid is too low for the requested time.

    ``needed_cutoff`` is the smallest radial frequency at which the heat
    multiplier has decayed below the configured threshold, ``needed_n`` the
    matching number of points per axis for the same box.
    """

    def __init__(self, message, needed_cutoff=None, needed_n=None):
        super().__init__(message)
        self.needed_cutoff = needed_cutoff
        self.needed_n = needed_n


class NegativeDensityError(LevyZvonkinError):
    pass


class AccuracyError(LevyZvonkinError):
    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class HorizonTooLarge(LevyZvonkinError):
    """The contraction condition 2 C(T) ||b|| <= 1/2 fails for the horizon."""

    def __init__(self, message, max_horizon=None):
        super().__init__(message)
        self.max_horizon = max_horizon


class DivergenceError(LevyZvonkinError):
    def __init__(self, message, history=None):
        super().__init__(message)
        self.history = list(history) if history is not None else []


class BlowUpError(LevyZvonkinError):
    pass


class ConfigError(LevyZvonkinError):
    def __init__(self, message, key=None):
        super().__init__(message)
        self.key = key
