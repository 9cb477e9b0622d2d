"""One-way bridge from framework checkpoints to the model container format.

The importer writes containers byte-exactly per the format documentation; it
never reads them back (the single source of truth for the format lives with
the consumer).
"""

from checkpoint_importer.convert import ConversionError, convert
from checkpoint_importer.manifest import Manifest, ManifestError, load_manifest

__version__ = "0.1.0"

__all__ = ["ConversionError", "Manifest", "ManifestError", "convert", "load_manifest"]
