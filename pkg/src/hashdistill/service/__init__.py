"""HTTP service wrapping the experiment pipeline."""

from .app import app

__all__ = ["app"]
