"""Masked conditional flow matching for adversarial video purification."""

__version__ = "0.1.0"
