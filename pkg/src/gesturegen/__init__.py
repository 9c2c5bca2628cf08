"""gesturegen: speech-to-gesture synthesis for interactive virtual humans.

The package turns a live or recorded speech signal into a stream of upper
body poses at 15 frames per second. Audio is cut into two-second chunks,
reduced to log-mel features, and mapped to 30-frame pose sequences by a
convolutional encoder-decoder trained adversarially against a motion
discriminator. Pose sequences can be scored with PCK, retargeted onto a
skeleton as per-bone quaternion tracks, exported to BVH, or played back by a
latency-aware streaming pipeline.
"""

from .errors import GestureGenError, GraphError, ShapeError

__version__ = "0.1.0"

__all__ = ["GestureGenError", "GraphError", "ShapeError", "__version__"]
