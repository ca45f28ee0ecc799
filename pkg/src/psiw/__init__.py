"""Scene-conditioned generation and fitting of 3D human bodies."""

__version__ = "0.1.0"
