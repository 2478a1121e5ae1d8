"""Exception types shared across the package."""


class KrastError(Exception):
    """Base class for all package errors."""


class ShapeError(KrastError):
    """Operands have incompatible shapes for an operation."""

    def __init__(self, op: str, *shapes):
        self.op = op
        self.shapes = tuple(tuple(s) for s in shapes)
        super().__init__(f"{op}: incompatible shapes {' vs '.join(map(str, self.shapes))}")


class UsageError(KrastError):
    """An API was used outside its contract (e.g. backward called twice)."""


class DomainError(KrastError):
    """A numeric argument is outside its valid domain."""


class ConfigError(KrastError):
    """A run configuration is invalid."""


class CorpusError(KrastError):
    """A class-description corpus violates a strategy's requirements."""

    def __init__(self, message: str, class_id=None):
        self.class_id = class_id
        if class_id is not None:
            message = f"class {class_id}: {message}"
        super().__init__(message)


class TokenBudgetExceeded(KrastError):
    """A token sequence is longer than the encoder's context length."""

    def __init__(self, length: int, budget: int, class_id=None, segment=None):
        self.length = length
        self.budget = budget
        self.overflow = length - budget
        self.class_id = class_id
        self.segment = segment
        where = ""
        if class_id is not None:
            where = f" (class {class_id}" + (f", segment {segment})" if segment else ")")
        super().__init__(
            f"sequence of {length} tokens exceeds the {budget}-token budget "
            f"by {self.overflow}{where}"
        )


class PreprocessError(KrastError):
    """A frame cannot be preprocessed (e.g. smaller than the crop window)."""


class SplitError(KrastError):
    """A subject split left one side empty."""


class InputError(KrastError):
    """Analysis inputs are malformed (label mismatch, id out of range, ...)."""


class NumericError(KrastError):
    """Training produced a non-finite value."""

    def __init__(self, message: str, diagnostics=None):
        self.diagnostics = diagnostics or {}
        super().__init__(message)
