"""Exception hierarchy shared by the library and the command line."""


class FracVarError(Exception):
    """Base class for all library errors."""


class DomainError(FracVarError, ValueError):
    """A numeric argument lies outside its admissible range."""


class ExprError(FracVarError):
    """Base class for expression errors."""


class ExprSyntaxError(ExprError):
    def __init__(self, message: str, offset: int) -> None:
        super().__init__(f"{message} at byte offset {offset}")
        self.offset = offset


class ExprNameError(ExprError):
    """Unknown identifier or a variable index outside the declared range."""


class EvalError(ExprError, DomainError):
    """Evaluation hit a domain error (log/sqrt of a negative, division by zero).

    ``node`` is the first offending grid index when evaluating on a grid.
    """

    def __init__(self, message: str, node: int | None = None) -> None:
        if node is not None:
            message = f"{message} (at grid node {node})"
        super().__init__(message)
        self.node = node
