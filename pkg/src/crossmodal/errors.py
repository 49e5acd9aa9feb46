"""Exception hierarchy shared by the whole package.

Each class maps to one CLI exit code (see cli.EXIT_CODES): configuration
and argument problems are distinct from I/O corruption, numeric aborts,
and shape incompatibilities, so operators can script against them.
"""


class CrossmodalError(Exception):
    """Base class for all errors raised by this package."""


class ParameterError(CrossmodalError):
    """An argument or configuration value is out of its documented range."""


class ShapeError(CrossmodalError):
    """Array dimensions are incompatible; message names both shapes."""


class ContractError(CrossmodalError):
    """An API was called outside its contract (e.g. non-scalar loss)."""


class FormatError(CrossmodalError):
    """A serialized file failed to parse. Carries the failing byte offset."""

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class CheckpointError(FormatError):
    """A checkpoint file is corrupt or does not match the model schema."""


class TrainingError(CrossmodalError):
    """Training aborted (non-finite loss, bad gradients). Carries context."""

    def __init__(self, message: str, epoch: int | None = None, batch: int | None = None):
        ctx = []
        if epoch is not None:
            ctx.append(f"epoch {epoch}")
        if batch is not None:
            ctx.append(f"batch {batch}")
        if ctx:
            message = f"{message} ({', '.join(ctx)})"
        super().__init__(message)
        self.epoch = epoch
        self.batch = batch


class MetricError(CrossmodalError):
    """A score set cannot support the requested metric (e.g. one class only)."""


class StratificationError(CrossmodalError):
    """A dataset split cannot be stratified (single-class input)."""
