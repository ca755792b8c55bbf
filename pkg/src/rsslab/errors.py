"""Exception hierarchy shared by all rsslab modules."""


class RssLabError(Exception):
    """Base class for every error raised by rsslab."""


class ValidationError(RssLabError, ValueError):
    """A value or configuration violates a documented precondition."""


class DegenerateConfiguration(RssLabError):
    """Point correspondences do not determine a homography."""


class NumericalInstability(RssLabError):
    """A projective division would blow up (homogeneous w too close to 0)."""


class ParseError(RssLabError):
    """A data file could not be parsed; carries a row/column location."""

    def __init__(self, message, path=None, row=None, column=None):
        loc = []
        if path is not None:
            loc.append(str(path))
        if row is not None:
            loc.append(f"row {row}")
        if column is not None:
            loc.append(f"column {column}")
        prefix = ":".join(loc)
        super().__init__(f"{prefix}: {message}" if prefix else message)
        self.path = path
        self.row = row
        self.column = column


class SchemaError(RssLabError):
    """Header, column layout or schema version is not the expected one."""


class CorruptArtifact(RssLabError):
    """A model artifact is truncated or fails its checksum."""


class EmptyOverlap(RssLabError):
    """Two time streams share no common time range."""


class DegenerateVariance(RssLabError):
    """A correlation was requested on a constant series."""


class UnknownRecording(RssLabError):
    """A split named a recording that is not in the dataset."""


class DimensionMismatch(RssLabError, ValueError):
    """An RSS vector has the wrong number of access points."""


class ShapeError(RssLabError, ValueError):
    """An input batch has the wrong shape for the network."""


class Diverged(RssLabError):
    """Training produced a non-finite loss."""

    def __init__(self, epoch, loss):
        super().__init__(f"training diverged at epoch {epoch} (loss={loss})")
        self.epoch = epoch
        self.loss = loss


class LengthMismatch(RssLabError, ValueError):
    """Predictions and ground truth have different lengths."""
