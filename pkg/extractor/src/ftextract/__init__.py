"""Frozen-encoder patch feature extraction for the failure-monitoring engine.

Turns recorded demonstration frames or videos into `.ftens` feature
files; the engine itself never touches pixels outside of VLM payloads.
"""

from .encoders import EncoderConfig, PatchEncoder
from .extract import discover_episodes, extract_features
from .writer import write_feature_tensor

__version__ = "0.1.0"

__all__ = [
    "EncoderConfig",
    "PatchEncoder",
    "discover_episodes",
    "extract_features",
    "write_feature_tensor",
]
