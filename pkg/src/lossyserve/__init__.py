"""Loss-tolerant JPEG transport and confidence-scaled dual-model serving."""

__version__ = "0.1.0"

from .errors import LossyServeError  # noqa: E402

__all__ = ["LossyServeError", "__version__"]
