"""Thin-plate-spline garment warping, try-on compositing and experiments."""

__version__ = "0.1.0"
