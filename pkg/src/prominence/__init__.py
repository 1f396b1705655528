"""Object prominence measurement for images and video frames."""
from prominence.kernels import BACKEND, HAVE_EXTENSION

__version__ = "0.1.0"
__all__ = ["BACKEND", "HAVE_EXTENSION", "__version__"]
