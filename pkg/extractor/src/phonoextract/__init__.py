"""Builds paired acoustic/text embedding datasets from phoneme recordings."""

__version__ = "0.1.0"

from .encoders import ExtractionConfig, build_encoders  # noqa: F401
from .pipeline import ExtractionError, build_dataset  # noqa: F401
