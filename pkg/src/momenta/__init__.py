"""Multimodal harmful-meme detection: data pipeline, annotation tools, fusion model and evaluation."""

__version__ = "0.1.0"
