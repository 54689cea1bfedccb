"""Video virtual try-on research harness: data, person representation, cloth warping,
composition network, temporal flow blending, losses, metrics and experiment running."""

from .errors import TryonLabError

__version__ = "0.1.0"
__all__ = ["TryonLabError", "__version__"]
