"""Radio map estimation from sparse 3D samples with a diffusion expert mixture."""

__version__ = "0.1.0"
