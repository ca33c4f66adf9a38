"""Two-stage creative sketch generation.

A part-locator stage predicts a coarse layout (per-part bounding boxes)
from user-supplied initial strokes, text, or a room diagram, using
graph-aware transformer encoders and a probabilistic mixture-density box
decoder.  A part-sketcher stage then renders the final raster sketch with
an adversarially trained convolutional generator whose normalization
layers are spatially modulated by per-part masks.
"""

__version__ = "0.1.0"
