"""Sliding-window cube planning, training-sample extraction and stitching."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Iterator, Sequence

import numpy as np

from .connectivity import encode_connectivity
from .errors import InputError
from .preprocess import lung_bbox
from .voxelcore import check_same_shape

Box = tuple[tuple[int, int], tuple[int, int], tuple[int, int]]


@dataclass(frozen=True)
class TileSpec:
    cube_size: tuple[int, int, int] = (32, 64, 64)
    stride: tuple[int, int, int] = (8, 16, 16)

    def __post_init__(self):
        if len(self.cube_size) != 3 or len(self.stride) != 3:
            raise InputError("cube_size and stride need three entries")
        for c, s in zip(self.cube_size, self.stride):
            if not 0 < s <= c:
                raise InputError(f"need 0 < stride <= cube size per axis, got cube={self.cube_size} stride={self.stride}")


# Desk-scale defaults; the original full-size cubes are 32x224x224 with
# stride (8, 56, 56) for training and (16, 128, 128) at test time.
TRAIN_SPEC = TileSpec((32, 64, 64), (8, 16, 16))
TEST_SPEC = TileSpec((32, 64, 64), (16, 32, 32))


@dataclass(frozen=True)
class SamplingPolicy:
    bg_keep_prob: float = 0.25
    flip_prob: float = 0.5

    def __post_init__(self):
        for name in ("bg_keep_prob", "flip_prob"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise InputError(f"{name} must be a probability, got {p}")


@dataclass
class Sample:
    image: np.ndarray  # (z, h, w)
    label: np.ndarray  # (26, z, h, w) connectivity labels, or (1, z, h, w) mask
    aux: np.ndarray  # (4, z, h, w): z/y/x coordinates in [0,1], normalised distance
    origin: tuple[int, int, int]
    flipped: bool = False


def _axis_origins(start: int, stop: int, cube: int, stride: int, extent: int) -> list[int]:
    if cube > extent:
        raise InputError(f"cube size {cube} exceeds volume extent {extent}")
    length = stop - start
    if cube >= length:
        return [min(start, extent - cube)]
    origins = list(range(start, stop - cube + 1, stride))
    if origins[-1] + cube < stop:
        origins.append(stop - cube)
    return origins


def plan_tiles(shape: Sequence[int], bbox: Box | None, spec: TileSpec) -> list[tuple[int, int, int]]:
    """Tile origins covering ``bbox`` in (Z, H, W) raster order.

    Origins step by ``spec.stride`` and the last one on each axis is pulled
    back so its tile ends exactly on the box edge. A box thinner than the
    cube gets a single tile, shifted inside the volume if needed.
    """
    if len(shape) != 3:
        raise InputError(f"shape must be 3-D, got {shape}")
    if bbox is None:
        bbox = tuple((0, n) for n in shape)
    per_axis = []
    for (start, stop), cube, stride, n in zip(bbox, spec.cube_size, spec.stride, shape):
        if not 0 <= start < stop <= n:
            raise InputError(f"bounding box {bbox} is empty or outside volume {tuple(shape)}")
        per_axis.append(_axis_origins(start, stop, cube, stride, n))
    return [(z, y, x) for z in per_axis[0] for y in per_axis[1] for x in per_axis[2]]


def tile_slices(origin, cube_size) -> tuple[slice, slice, slice]:
    return tuple(slice(o, o + c) for o, c in zip(origin, cube_size))


def aux_channels(origin, cube_size, bbox: Box, dmap_normalized: np.ndarray) -> np.ndarray:
    """Coordinate and distance channels for one tile, float32 ``(4, z, h, w)``.

    Coordinates are global voxel indices rescaled so the lung box spans
    [0, 1]; voxels outside the box are clipped.
    """
    coords = []
    for axis, ((b0, b1), o, c) in enumerate(zip(bbox, origin, cube_size)):
        idx = np.arange(o, o + c, dtype=np.float64)
        v = np.clip((idx - b0) / max(b1 - 1 - b0, 1), 0.0, 1.0)
        shape = [1, 1, 1]
        shape[axis] = c
        coords.append(np.broadcast_to(v.reshape(shape), tuple(cube_size)))
    dist = dmap_normalized[tile_slices(origin, cube_size)]
    return np.stack([*coords, dist]).astype(np.float32)


def normalize_distance(dmap) -> np.ndarray:
    d = np.asarray(dmap, dtype=np.float64)
    peak = d.max()
    return d / peak if peak > 0 else d.copy()


def _flip_w(sample_image, mask, aux):
    aux = aux[..., ::-1].copy()
    # a mirrored patient still has ascending x coordinates
    aux[2] = 1.0 - aux[2]
    return sample_image[..., ::-1].copy(), mask[..., ::-1].copy(), aux


def sample_training_cubes(
    image,
    airway,
    lung,
    dmap,
    spec: TileSpec = TRAIN_SPEC,
    policy: SamplingPolicy = SamplingPolicy(),
    seed: int = 0,
    target: str = "connectivity",
) -> Iterator[Sample]:
    """Yield one pass of training cubes over the lung bounding box.

    Cubes holding airway are always kept; airway-free cubes survive with
    probability ``policy.bg_keep_prob``. Kept cubes are mirrored along W with
    probability ``policy.flip_prob``; mirroring happens on the mask, before
    the per-cube connectivity encoding. ``target="mask"`` yields the plain
    one-channel mask instead of connectivity labels.
    """
    check_same_shape(image=image, airway=airway, lung=lung, dmap=dmap)
    if target not in ("connectivity", "mask"):
        raise InputError(f"unknown target {target!r}")
    airway = np.asarray(airway, dtype=bool)
    bbox = _bbox_or_full(lung)
    dnorm = normalize_distance(dmap)
    rng = np.random.default_rng(seed)
    for origin in plan_tiles(np.shape(image), bbox, spec):
        keep_draw, flip_draw = rng.random(2)
        sl = tile_slices(origin, spec.cube_size)
        m = airway[sl]
        if not m.any() and keep_draw >= policy.bg_keep_prob:
            continue
        img = np.asarray(image[sl], dtype=np.float32)
        aux = aux_channels(origin, spec.cube_size, bbox, dnorm)
        flipped = bool(flip_draw < policy.flip_prob)
        if flipped:
            img, m, aux = _flip_w(img, m, aux)
        label = encode_connectivity(m) if target == "connectivity" else m[None].astype(np.uint8)
        yield Sample(img, label, aux, origin, flipped)


def _bbox_or_full(lung) -> Box:
    lung = np.asarray(lung, dtype=bool)
    if not lung.any():
        raise InputError("lung mask is empty")
    return lung_bbox(lung)


def stitch_predictions(
    tiles: Iterable[tuple[Sequence[int], np.ndarray]],
    full_shape: Sequence[int],
    bbox: Box | None = None,
) -> np.ndarray:
    """Average overlapping tile predictions into one ``(C, Z, H, W)`` grid.

    Uncovered voxels are 0. With ``bbox`` given, any uncovered voxel inside
    the box is an error.
    """
    mean = counts = None
    for origin, pred in tiles:
        pred = np.asarray(pred, dtype=np.float64)
        if mean is None:
            mean = np.zeros((pred.shape[0], *full_shape), dtype=np.float64)
            counts = np.zeros(tuple(full_shape), dtype=np.int64)
        sl = tile_slices(origin, pred.shape[1:])
        counts[sl] += 1
        # running mean: exact when every tile agrees on a voxel
        view = mean[(slice(None), *sl)]
        view += (pred - view) / counts[sl]
    if mean is None:
        raise InputError("no tiles to stitch")
    if bbox is not None:
        inner = counts[tuple(slice(a, b) for a, b in bbox)]
        gaps = np.argwhere(inner == 0)
        if len(gaps):
            voxel = tuple(int(g + b[0]) for g, b in zip(gaps[0], bbox))
            raise InputError(f"tiles leave voxel {voxel} inside the bounding box uncovered")
    return mean
