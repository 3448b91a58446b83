"""Low-quality image detection with a hierarchical VAE and partial reconstruction."""

__version__ = "0.1.0"
