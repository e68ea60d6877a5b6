"""matrixlens: synthetic handwritten-matrix datasets, grid reconstruction,
detection metrics, and step-by-step calculation rendering."""

__version__ = "0.1.0"

from .matrix import MatrixValue

__all__ = ["MatrixValue", "__version__"]
