"""Exception hierarchy shared by the simulation and verification modules."""


class RSJDError(Exception):
    """Base class for all package errors."""


class ModelError(RSJDError):
    """A model specification violates its declared structure."""


class ModelEvaluationError(ModelError):
    def __init__(self, message, point=None):
        super().__init__(message if point is None else f"{message} at {point}")
        self.point = point


class QuadratureError(RSJDError):
    def __init__(self, message, achieved_error=None):
        super().__init__(message)
        self.achieved_error = achieved_error


class SamplerContractError(RSJDError):
    """A jump-mark sampler returned a mark outside its declared band."""


class BoundViolationError(RSJDError):
    def __init__(self, pair, time, value, bound):
        super().__init__(
            f"intensity {pair} = {value!r} exceeds declared bound {bound!r} at t={time!r}"
        )
        self.pair = pair
        self.time = time
        self.value = value
        self.bound = bound


class PathDivergedError(RSJDError):
    def __init__(self, message, last_state=None):
        super().__init__(message)
        self.last_state = last_state


class ReplayError(RSJDError):
    """A recorded noise record cannot be replayed on the requested grid."""


class PresetError(ModelError):
    pass


class HazardDomainError(PresetError):
    pass


class DegenerateWeightsError(RSJDError):
    def __init__(self, ess):
        super().__init__(
            f"effective sample size {ess:.1f} < 100; bring the dominating rates closer to the intensities"
        )
        self.ess = ess


class ConfigError(RSJDError):
    """Experiment configuration failed schema or semantic validation."""
