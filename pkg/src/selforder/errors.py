"""Exception and warning types shared across the package."""


class SelfOrderError(Exception):
    """Base class for all package errors."""


class DimensionError(SelfOrderError, ValueError):
    """Operand shapes are incompatible."""


class ParameterError(SelfOrderError, ValueError):
    """A hyper-parameter is outside its valid range."""


class ContractError(SelfOrderError, ValueError):
    """A call violated an operation's precondition."""


class InputError(SelfOrderError, ValueError):
    """User-supplied data is empty, non-finite or otherwise unusable."""


class ParseError(InputError):
    """A text file could not be parsed."""

    def __init__(self, message: str, line: int | None = None, path=None):
        self.line = line
        self.path = path
        where = ""
        if path is not None:
            where += f"{path}:"
        if line is not None:
            where += f"line {line}: "
        elif where:
            where += " "
        super().__init__(where + message)


class CheckpointError(SelfOrderError, IOError):
    """A checkpoint file is truncated, corrupt or of the wrong version."""


class NonFiniteLossError(SelfOrderError, FloatingPointError):
    """Training produced a NaN or infinite loss."""

    def __init__(self, epoch: int, batch: int, value: float):
        self.epoch = epoch
        self.batch = batch
        self.value = value
        super().__init__(
            f"non-finite loss {value!r} at epoch {epoch}, batch {batch}"
        )


class ConvergenceWarning(UserWarning):
    """Sinkhorn stopped at ``max_iters`` before reaching its tolerance."""

    def __init__(self, violation: float, iters: int):
        self.violation = violation
        self.iters = iters
        super().__init__(
            f"Sinkhorn did not converge in {iters} iterations "
            f"(max marginal violation {violation:.3e})"
        )
