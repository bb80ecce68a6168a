"""Exception hierarchy shared by every acnn module."""


class AcnnError(Exception):
    """Base class for all library errors."""


class InvalidArgument(AcnnError, ValueError):
    pass


class ShapeError(AcnnError, ValueError):
    pass


class DegenerateNeighborhood(AcnnError):
    """Raised when a neighborhood's covariance has rank < 2."""


class NormalsRequired(AcnnError):
    pass


class ConfigMismatch(AcnnError):
    pass


class ParseError(AcnnError, ValueError):
    """Malformed input file. ``line`` is 1-based, or None when not line-specific."""

    def __init__(self, message, line=None, path=None):
        self.line = line
        self.path = path
        where = ""
        if path is not None:
            where += f"{path}:"
        if line is not None:
            where += f"{line}:"
        super().__init__(f"{where} {message}" if where else message)


class TrainingDiverged(AcnnError):
    def __init__(self, epoch, batch, loss):
        self.epoch = epoch
        self.batch = batch
        self.loss = loss
        super().__init__(f"non-finite loss {loss!r} at epoch {epoch}, batch {batch}")
