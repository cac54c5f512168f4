"""Bridge from PyTorch post-training static quantization to the verifier's
model file format."""

from .export import ExportManifest, export_model, scan_ties
from .extract import ExtractedModel, UnsupportedLayerError, extract
from .queries import make_queries

__all__ = [
    "ExportManifest",
    "ExtractedModel",
    "UnsupportedLayerError",
    "export_model",
    "extract",
    "make_queries",
    "scan_ties",
]
