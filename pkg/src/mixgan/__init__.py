"""Mixup-augmented adversarial autoencoder for feature learning and synthetic feature generation."""

__version__ = "0.1.0"
