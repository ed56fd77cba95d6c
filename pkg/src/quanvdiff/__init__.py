"""Class-conditioned denoising diffusion with quanvolutional hybrid blocks."""

__version__ = "0.1.0"
