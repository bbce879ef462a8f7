"""Exception types shared across the library."""


class AlphaScaleError(Exception):
    """Base class for library-specific failures."""


class DimensionMismatch(AlphaScaleError, ValueError):
    """A tensor, batch, or layout did not have the expected shape."""

    def __init__(self, message: str, tensor: str | None = None):
        self.tensor = tensor
        if tensor is not None:
            message = f"{message} (tensor: {tensor})"
        super().__init__(message)


class NonFiniteError(AlphaScaleError, FloatingPointError):
    """A NaN or infinity appeared where finite values are required."""

    def __init__(self, message: str, tensor: str | None = None, index: int | None = None):
        self.tensor = tensor
        self.index = index
        parts = [message]
        if tensor is not None:
            parts.append(f"tensor: {tensor}")
        if index is not None:
            parts.append(f"batch index: {index}")
        super().__init__(" | ".join(parts))


class CacheMismatch(AlphaScaleError, ValueError):
    """A backward pass was handed a cache from a different forward call."""


class DegenerateCritic(AlphaScaleError, ValueError):
    """Mean |Q| collapsed below the normalization floor."""


class TrainingDiverged(AlphaScaleError, RuntimeError):
    """A training run produced a non-finite loss."""

    def __init__(self, message: str, step: int, recent_rows=()):
        self.step = step
        self.recent_rows = list(recent_rows)
        super().__init__(f"{message} at step {step}")
