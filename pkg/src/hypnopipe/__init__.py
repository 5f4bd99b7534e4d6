"""Polysomnography processing: hypnodensity estimation and narcolepsy scoring."""

__version__ = "0.1.0"

from .errors import HypnopipeError

__all__ = ["HypnopipeError", "__version__"]
