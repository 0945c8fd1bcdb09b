class CircleKamError(Exception):
    """Base class for all errors raised by circlekam."""


class UnsupportedOperation(CircleKamError):
    pass


class WindingCapError(CircleKamError):
    pass


class GridError(CircleKamError):
    pass


class CompositionError(CircleKamError):
    pass


class ConvergenceError(CircleKamError):
    pass


class AubryInconsistency(CircleKamError):
    """The detected Aubry set is empty, which cannot happen for a critical kernel."""


class ConstructionError(CircleKamError):
    pass


class ScheduleError(CircleKamError):
    def __init__(self, message, index=None, failing_class=None):
        super().__init__(message)
        self.index = index
        self.failing_class = failing_class
