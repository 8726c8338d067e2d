"""Exception types shared across the package."""


class InvalidParameter(ValueError):
    pass


class InvalidConfiguration(ValueError):
    pass


class InvalidState(RuntimeError):
    pass


class NumericalFailure(ArithmeticError):
    pass
