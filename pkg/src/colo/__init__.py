"""Contrastive re-ranking summarization at desk scale.

The package trains small extractive and abstractive summarizers whose
candidate summaries are scored against the source document in a shared
embedding space.  Candidates are generated online, from the model's own
current distribution, and ranked with a summary-level margin loss, so a
single encoder pass both generates and re-ranks at inference time.
"""

from .errors import ColoError, ConfigError, ShapeError

__version__ = "0.1.0"

__all__ = ["ColoError", "ConfigError", "ShapeError", "__version__"]
