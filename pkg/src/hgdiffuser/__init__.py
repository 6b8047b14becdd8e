"""Score-based diffusion on SE(3) for parallel-jaw grasps, with demonstration guidance."""

__version__ = "0.1.0"
