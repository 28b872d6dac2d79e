"""Angular metric learning on concentric hyperspheres.

Unit-normalized features and radius-``alpha`` class centers share one
origin; training combines a batch-hard angular triplet loss with a
bias-free angular softmax and an orthogonality penalty on the embedding
layer. Retrieval is scored with CMC and mAP.
"""

from .errors import HHEError
from .losses import LossConfig, VARIANTS

__version__ = "0.1.0"

__all__ = ["HHEError", "LossConfig", "VARIANTS", "__version__"]
