"""Cross-domain sequence labeling with disentangled latent representations."""

__version__ = "0.1.0"
