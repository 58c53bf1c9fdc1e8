"""Voxel-connectivity aware airway segmentation.

Binary airway masks become 26-channel connectivity labels, a small 3-D
encoder-decoder learns to predict them, and predictions are decoded back
into masks through pairwise agreement of neighbouring voxels.
"""

__version__ = "0.1.0"

from .connectivity import decode_connectivity, encode_connectivity, has_neighbor, pairwise_agreement_filter
from .errors import ConnsegError, EmptyResultError, InputError, NumericError, VolumeIOError
from .voxelcore import Volume, complement_index, neighbor_offsets, shifted_lookup

__all__ = [
    "ConnsegError",
    "EmptyResultError",
    "InputError",
    "NumericError",
    "Volume",
    "VolumeIOError",
    "complement_index",
    "decode_connectivity",
    "encode_connectivity",
    "has_neighbor",
    "neighbor_offsets",
    "pairwise_agreement_filter",
    "shifted_lookup",
]
