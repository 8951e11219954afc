"""Behavior-conditioned item-graph diffusion for multimodal recommendation."""

from .config import RunConfig
from .errors import ArtifactMismatch, ConfigError, DataFormatError, IGDMError, NumericalError

__version__ = "0.1.0"

__all__ = ["RunConfig", "IGDMError", "ConfigError", "DataFormatError", "NumericalError",
           "ArtifactMismatch", "__version__"]
