"""Learnable-matcher bridge: feature extraction + matching on image pairs
from a facadeloc pair manifest, exported as matchset/1 wire files.

The bridge is a thin exporter: no geometry, no metrics. All evaluation
stays in the core toolkit so results are matcher-agnostic.
"""

__version__ = "0.1.0"
