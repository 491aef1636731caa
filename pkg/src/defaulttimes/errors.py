"""Exception hierarchy shared by all modules."""


class DefaultTimesError(Exception):
    pass


class InvalidSpaceError(DefaultTimesError):
    """Malformed scenario space: bad weights, non-refining partitions, zero-weight blocks."""


class MeasurabilityError(DefaultTimesError):
    """A process is not adapted (or not predictable) w.r.t. the filtration it claims."""


class DegenerateHazardError(DefaultTimesError):
    pass


class PreconditionError(DefaultTimesError):
    """A structural hypothesis required by an operation does not hold on the model."""


class InvalidDensityError(DefaultTimesError):
    pass


class InvalidExponentialError(InvalidDensityError):
    def __init__(self, message, scenario=None, time_index=None):
        super().__init__(message)
        self.scenario = scenario
        self.time_index = time_index


class UnsupportedFamilyError(DefaultTimesError):
    pass


class InternalInconsistencyError(DefaultTimesError):
    """Two routes that must agree by theory disagree beyond tolerance."""


class IllPosedProjectionError(DefaultTimesError):
    pass


class SimulationError(DefaultTimesError):
    def __init__(self, message, path=None, step=None):
        super().__init__(message)
        self.path = path
        self.step = step


class BasisError(DefaultTimesError):
    pass


class ConfigError(DefaultTimesError):
    pass
