"""Exception types shared across the package."""


class ContractError(ValueError):
    """A precondition of an operation was violated."""


class ShapeError(ContractError):
    """Operand shapes are incompatible."""


class NumericError(ArithmeticError):
    """A computation produced non-finite values."""


class SceneError(ValueError):
    """A scene contains a target outside the sensor's unambiguous limits."""
