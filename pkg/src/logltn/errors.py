"""Exception hierarchy shared across the package."""


class LogicError(Exception):
    """Base class for every error raised by this package."""


class ParseError(LogicError):
    def __init__(self, message, line, column):
        super().__init__(f"{message} (line {line}, column {column})")
        self.line = line
        self.column = column


class UnboundVariableError(LogicError):
    def __init__(self, name):
        super().__init__(f"unbound variable '{name}'")
        self.name = name


class ShapeError(LogicError, ValueError):
    pass


class NNFError(LogicError):
    """A log-space configuration was handed a formula outside negation normal form."""


class SpaceMixingError(LogicError):
    """An operator received a truth value from the wrong space (linear vs log)."""


class GroundingError(LogicError):
    """Unknown symbol, bad guard, empty selection, or malformed environment."""


class NonFiniteLossError(LogicError, FloatingPointError):
    def __init__(self, step, formula_label, value):
        super().__init__(
            f"non-finite loss at step {step}: formula {formula_label!r} grounded to {value}"
        )
        self.step = step
        self.formula_label = formula_label
        self.value = value
