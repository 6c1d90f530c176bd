"""Offline feature extractor emitting LSE embedding files and registries."""

from .encoders import EncoderError, ToyEncoder, load_encoder
from .lse_io import LseFormatError, read_lse, write_lse
from .manifest import ExtractionManifest, ManifestError, manifest_from_directory

__version__ = "0.1.0"
