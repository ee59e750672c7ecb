"""Batch sentence-embedding export to the EMB1 binary matrix format."""

__version__ = "0.1.0"

from .errors import ExportError, FormatError, ModelError
from .export import DEFAULT_MODEL, EmbedJob, embed_file, embed_topics

__all__ = [
    "DEFAULT_MODEL",
    "EmbedJob",
    "ExportError",
    "FormatError",
    "ModelError",
    "embed_file",
    "embed_topics",
]
