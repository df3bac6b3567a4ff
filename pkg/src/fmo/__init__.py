"""Detection, tracking and deblurring of fast moving objects in video."""

from ._accel import backend

__version__ = "0.1.0"
__all__ = ["backend", "__version__"]
