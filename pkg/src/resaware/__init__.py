"""Resolution-aware audio deepfake detector."""

__version__ = "0.1.0"
