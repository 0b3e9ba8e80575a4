"""miniqa: desk-scale progressive-resolution training for image quality regression."""

__version__ = "0.1.0"
