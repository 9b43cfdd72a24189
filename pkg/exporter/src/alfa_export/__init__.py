"""Encoder-to-bundle exporter for the anomaly engine."""

from .export import ExportConfig, ExportError, export_dataset, export_image, export_text

__all__ = ["ExportConfig", "ExportError", "export_dataset", "export_image",
           "export_text"]
