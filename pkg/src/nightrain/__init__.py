"""nightrain: a deterministic night-rain perception toolkit.

Synthetic rain curricula, a small trainable denoiser, saliency-based light
detection with classification and pairing, Kalman/Hungarian temporal
tracking with decision logic, and an evaluation harness.
"""

__version__ = "0.1.0"

from .errors import CheckpointError, DivergenceError, ValidationError

__all__ = ["CheckpointError", "DivergenceError", "ValidationError", "__version__"]
