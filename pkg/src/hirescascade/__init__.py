"""Higher-resolution sampling for toy latent diffusion models."""

__version__ = "0.1.0"
