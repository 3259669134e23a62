"""Screenshot-sequence extraction into uflow dataset directories."""

from .extract import ExtractJob, extract_features
from .manifest import InputEpisode, load_manifest
from .textprov import ToyTextProvider, embed_texts

__version__ = "0.1.0"
