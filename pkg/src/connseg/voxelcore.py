"""Grid types, axis conventions and the 26-neighbour indexing scheme.

All arrays are indexed ``(Z, H, W)``. Neighbour channels are 1-indexed
``1..26`` and enumerate the offsets of the 3x3x3 cube in lexicographic
order with ``-1 < 0 < 1``, skipping the centre. Channel ``i`` and channel
``27 - i`` always point in opposite directions.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .errors import InputError

N_NEIGHBORS = 26

_OFFSETS: tuple[tuple[int, int, int], ...] = tuple(
    o for o in itertools.product((-1, 0, 1), repeat=3) if o != (0, 0, 0)
)


@dataclass(frozen=True)
class NeighborScheme:
    offsets: tuple[tuple[int, int, int], ...] = _OFFSETS

    def __len__(self) -> int:
        return len(self.offsets)

    def offset(self, i: int) -> tuple[int, int, int]:
        """Offset ``(dz, dy, dx)`` of 1-indexed channel ``i``."""
        _check_index(i)
        return self.offsets[i - 1]

    def as_array(self) -> np.ndarray:
        return np.array(self.offsets, dtype=np.int64)


_SCHEME = NeighborScheme()


def neighbor_offsets() -> NeighborScheme:
    return _SCHEME


def _check_index(i) -> None:
    if isinstance(i, bool) or not isinstance(i, (int, np.integer)):
        raise InputError(f"channel index must be an integer, got {i!r}")
    if not 1 <= i <= N_NEIGHBORS:
        raise InputError(f"channel index must be in 1..26, got {i}")


def complement_index(i: int) -> int:
    """Channel whose offset is the negation of channel ``i``'s."""
    _check_index(i)
    return N_NEIGHBORS + 1 - int(i)


def _shift_slices(n: int, d: int) -> tuple[slice, slice]:
    # out[dst] = src[src_slice] realises out[p] = src[p + d]
    if d > 0:
        return slice(0, n - d), slice(d, n)
    if d < 0:
        return slice(-d, n), slice(0, n + d)
    return slice(0, n), slice(0, n)


def shift_by_offset(arr: np.ndarray, offset) -> np.ndarray:
    """``out[..., p] = arr[..., p + offset]`` with zero padding.

    Works on the trailing three axes, so leading channel/batch axes pass
    through untouched.
    """
    out = np.zeros_like(arr)
    dst, src = [], []
    for n, d in zip(arr.shape[-3:], offset):
        a, b = _shift_slices(n, int(d))
        dst.append(a)
        src.append(b)
    out[(Ellipsis, *dst)] = arr[(Ellipsis, *src)]
    return out


def shifted_lookup(mask: np.ndarray, i: int) -> np.ndarray:
    """Read each voxel's ``i``-th neighbour; out-of-grid neighbours read 0."""
    return shift_by_offset(np.asarray(mask), _SCHEME.offset(i))


def as_mask(arr, name: str = "mask") -> np.ndarray:
    """Validate a {0,1} grid and return it as a boolean array."""
    a = np.asarray(arr)
    if a.ndim != 3:
        raise InputError(f"{name} must be 3-D (Z,H,W), got shape {a.shape}")
    if a.dtype == bool:
        return a
    if not np.isin(a, (0, 1)).all():
        raise InputError(f"{name} must contain only 0 and 1")
    return a.astype(bool)


def check_same_shape(**arrays) -> tuple[int, ...]:
    shapes = {k: tuple(np.shape(v)[-3:]) for k, v in arrays.items()}
    if len(set(shapes.values())) > 1:
        raise InputError(f"spatial shapes disagree: {shapes}")
    return next(iter(shapes.values()))


@dataclass(frozen=True)
class Volume:
    """Scalar (Z,H,W) grid plus voxel spacing in millimetres.

    Spacing is carried for I/O only; no kernel in the package reads it.
    """

    data: np.ndarray
    spacing: tuple[float, float, float] = field(default=(1.0, 1.0, 1.0))

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 3 or min(data.shape) < 1:
            raise InputError(f"volume data must be a non-empty 3-D array, got shape {data.shape}")
        spacing = tuple(float(s) for s in self.spacing)
        if len(spacing) != 3 or not all(s > 0 for s in spacing):
            raise InputError(f"spacing must be three positive reals, got {self.spacing}")
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "spacing", spacing)

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.data.shape
