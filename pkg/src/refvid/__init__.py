"""Reference-guided cascaded latent video diffusion, desk scale."""

__version__ = "0.1.0"
