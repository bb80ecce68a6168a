"""Annular convolutional networks on point clouds, in numpy.

Submodules: ``geometry`` (sampling, ring search, ordering), ``annular``
(circular convolution and ring pooling), ``numeric`` (layers, loss, Adam),
``network`` (model, training, evaluation), ``data`` (synthetic shapes and
file formats) and ``cli``.
"""

__version__ = "0.1.0"

from ._backend import NAME as backend  # noqa: E402
from .errors import (  # noqa: E402
    AcnnError,
    ConfigMismatch,
    DegenerateNeighborhood,
    InvalidArgument,
    NormalsRequired,
    ParseError,
    ShapeError,
    TrainingDiverged,
)

__all__ = [
    "__version__",
    "backend",
    "AcnnError",
    "ConfigMismatch",
    "DegenerateNeighborhood",
    "InvalidArgument",
    "NormalsRequired",
    "ParseError",
    "ShapeError",
    "TrainingDiverged",
]
