"""HTTP service wrapping the training/evaluation pipeline."""

from .app import app  # noqa: F401
