"""Desk-scale multimodal motion prediction with intention-query transformers."""

__version__ = "0.1.0"
