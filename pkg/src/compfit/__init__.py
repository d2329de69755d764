"""compfit: sound-matching for a five-parameter feed-forward compressor.

Fits compressor parameters to paired dry/processed audio with a damped
Newton-Raphson method using hand-derived first- and second-order
gradients, evaluates matches (ESR, LDR), and interpolates fitted
parameter tables across device settings.
"""
from .backend import backend_name, get_backend, set_backend

__version__ = "0.1.0"

__all__ = ["backend_name", "get_backend", "set_backend", "__version__"]
