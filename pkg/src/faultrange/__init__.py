"""Soft-error resilience toolkit for small CNN classifiers.

Quantifies and mitigates the effect of memory bit flips on FP32 inference:
range-supervision protection layers, a bit-exact fault injector, and a
campaign harness computing detection/mitigation/severity statistics.
"""

from faultrange.errors import ConfigError, FormatError, TrainingError

__version__ = "0.1.0"

__all__ = ["ConfigError", "FormatError", "TrainingError", "__version__"]
