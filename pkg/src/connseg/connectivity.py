"""Encode binary masks as 26-channel connectivity cubes and decode them back.

A connectivity cube has shape ``(26, Z, H, W)``. Hard labels are stored as
``uint8``/``bool``; predicted probabilities as floating point. Channel ``i``
(1-indexed, stored at array index ``i - 1``) is set at voxel ``P`` when both
``P`` and its ``i``-th neighbour are foreground.
"""

from __future__ import annotations

import numpy as np

from .errors import InputError
from .voxelcore import N_NEIGHBORS, as_mask, complement_index, neighbor_offsets, shift_by_offset


def encode_connectivity(mask) -> np.ndarray:
    """Connectivity label cube (uint8, 26 x Z x H x W) of a binary mask.

    Borders are zero padded, so a neighbour outside the grid is never
    connected.
    """
    m = as_mask(mask)
    scheme = neighbor_offsets()
    cube = np.empty((N_NEIGHBORS, *m.shape), dtype=np.uint8)
    for k, off in enumerate(scheme.offsets):
        cube[k] = m & shift_by_offset(m, off)
    return cube


def _as_label_cube(cube) -> np.ndarray:
    c = np.asarray(cube)
    if c.ndim != 4 or c.shape[0] != N_NEIGHBORS:
        raise InputError(f"connectivity cube must have shape (26,Z,H,W), got {c.shape}")
    if c.dtype.kind == "f":
        raise InputError("pairwise agreement needs a hard-label cube; binarize probabilities first")
    if c.dtype != bool and not np.isin(c, (0, 1)).all():
        raise InputError("label cube must contain only 0 and 1")
    return c.astype(bool)


def pairwise_agreement_filter(cube) -> np.ndarray:
    """Keep channel ``i`` at ``P`` only if ``P + offset_i`` confirms it.

    The confirming bit lives on the complement channel at the neighbour.
    Returns a uint8 cube; the filter never sets a bit and is idempotent.
    """
    c = _as_label_cube(cube)
    scheme = neighbor_offsets()
    out = np.empty(c.shape, dtype=np.uint8)
    for i in range(1, N_NEIGHBORS + 1):
        j = complement_index(i)
        out[i - 1] = c[i - 1] & shift_by_offset(c[j - 1], scheme.offset(i))
    return out


def decode_connectivity(cube, threshold: float = 0.5) -> np.ndarray:
    """Airway candidate mask from a connectivity cube.

    Values ``>= threshold`` count as connected. After the pairwise
    agreement filter a voxel is foreground when any of its 26 channels
    survives. Voxels with no foreground neighbour cannot be represented
    and are therefore never recovered.
    """
    if not 0.0 < threshold < 1.0:
        raise InputError(f"threshold must lie in (0, 1), got {threshold}")
    c = np.asarray(cube)
    if c.ndim != 4 or c.shape[0] != N_NEIGHBORS:
        raise InputError(f"connectivity cube must have shape (26,Z,H,W), got {c.shape}")
    agreed = pairwise_agreement_filter(c >= threshold)
    return agreed.any(axis=0)


def has_neighbor(mask) -> np.ndarray:
    """Foreground voxels with at least one 26-neighbour in the mask."""
    m = as_mask(mask)
    out = np.zeros_like(m)
    for off in neighbor_offsets().offsets:
        out |= shift_by_offset(m, off)
    return m & out
