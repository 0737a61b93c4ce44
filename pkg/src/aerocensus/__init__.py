"""Neighborhood socioeconomic indicators from high-resolution overhead imagery.

The package covers the full pipeline: survey + boundary + imagery ingestion,
derived-indicator computation, model-input preparation (patching, resizing,
grid sampling), dataset splitting, a supervised CNN regressor, a
semi-supervised visual-word clustering branch, and evaluation/explainability
reporting. Stages communicate exclusively through manifest files, so each can
be run, tested, and resumed independently.
"""

__version__ = "0.1.0"

from .errors import AerocensusError

__all__ = ["AerocensusError", "__version__"]
