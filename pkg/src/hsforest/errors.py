"""Exception types raised across the package."""


class ParameterError(ValueError):
    """A distribution or model parameter lies outside its domain."""


class TailOverflowError(ArithmeticError):
    """A truncated-normal bound sits too far in the tail to sample from."""

    def __init__(self, message, row=None):
        super().__init__(message if row is None else f"{message} (row {row})")
        self.row = row


class EstimationError(RuntimeError):
    """A preliminary estimator could not produce a usable answer."""


class CalibrationError(RuntimeError):
    """The censoring rate could not be bracketed or reached."""


class SpecError(ValueError):
    """A simulation scenario description is invalid."""


class NumericalError(ArithmeticError):
    """The sampler produced a non-finite value."""

    def __init__(self, message, iteration=None):
        super().__init__(message if iteration is None else f"{message} (iteration {iteration})")
        self.iteration = iteration
