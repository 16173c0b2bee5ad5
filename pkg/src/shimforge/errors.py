"""Exception hierarchy. CLI exit codes hang off the three top-level families."""


class ShimforgeError(Exception):
    exit_code = 1


class ConfigError(ShimforgeError, ValueError):
    exit_code = 2


class GridError(ConfigError):
    """Timestep is not on the sampler grid."""


class NumericError(ShimforgeError, ArithmeticError):
    exit_code = 3


class TrainingError(NumericError):
    def __init__(self, message: str, step: int):
        super().__init__(f"{message} (step {step})")
        self.step = step


class ArtifactIOError(ShimforgeError, OSError):
    exit_code = 4


class ChecksumError(ArtifactIOError):
    pass


class ShapeError(ShimforgeError, ValueError):
    exit_code = 2


class InvalidInputError(ShimforgeError, ValueError):
    exit_code = 2


class CapacityError(ShapeError):
    pass


class CalibrationError(ShimforgeError, ValueError):
    exit_code = 2
