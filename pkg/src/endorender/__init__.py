"""Differentiable spotlight/BRDF inverse rendering for endoscopic scenes."""

__version__ = "0.1.0"
