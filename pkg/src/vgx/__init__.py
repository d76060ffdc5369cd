"""Vector-graphics representation learning: SVG canonicalization, a
hierarchical set-of-sequences VAE, and latent-space tools."""

__version__ = "0.1.0"
