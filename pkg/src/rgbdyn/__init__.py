"""RGB-D SLAM front-end for dynamic scenes.

Sparse-feature camera tracking that ignores moving content, multi-view
geometric detection of moving objects fused with semantic masks, background
inpainting from prior keyframes, and a trajectory/mask evaluation harness.
"""

__version__ = "0.1.0"
