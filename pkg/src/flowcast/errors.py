"""Exception types shared across the toolkit."""


class FlowcastError(Exception):
    """Base class for all toolkit errors."""


class MissingColumnError(FlowcastError):
    """A mapped CSV column is absent from the header row."""


class MalformedRowError(FlowcastError):
    """A CSV data row failed validation; message carries the line number."""

    def __init__(self, line_no: int, reason: str):
        self.line_no = line_no
        self.reason = reason
        super().__init__(f"line {line_no}: {reason}")


class OutOfRangeError(FlowcastError):
    """A port or protocol value is outside its valid integer range."""


class NonFiniteError(FlowcastError):
    """A numeric input contains NaN or infinity."""


class TooFewWindowsError(FlowcastError):
    """Not enough windows to produce a train/val/test split."""


class ShapeMismatchError(FlowcastError):
    """Tensor operands have incompatible shapes."""


class IndexOutOfBoundsError(FlowcastError):
    """A gather or segment index lies outside the valid range."""


class NotScalarError(FlowcastError):
    """backward() was called on a non-scalar tensor."""


class ClassOutOfRangeError(FlowcastError):
    """A classification target id does not index a score column."""


class EmptyMaskError(FlowcastError):
    """Masked-feature loss requested with an empty mask index set."""


class KernelTooLargeError(FlowcastError):
    """Moving-average kernel exceeds the sequence length."""


class VersionMismatchError(FlowcastError):
    """Serialized graph carries an unsupported format version."""


class CorruptError(FlowcastError):
    """Serialized graph payload is truncated or fails its checksum."""


class DegenerateError(FlowcastError):
    """No class has both positive and negative samples for AUROC."""


class DivergedError(FlowcastError):
    """Training produced a non-finite loss."""


class EmptySpaceError(FlowcastError):
    """A hyperparameter search space has no parameters."""
