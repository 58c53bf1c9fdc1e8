"""Fuzzy connectedness consolidation of airway candidates.

Affinity between 26-adjacent voxels is a Gaussian of their intensity
difference. The connectedness of a voxel is the strength of its best path
to a seed, where a path is as strong as its weakest link.
"""

from __future__ import annotations

import heapq
import logging
import math
from dataclasses import dataclass

import numpy as np

from .errors import InputError
from .voxelcore import as_mask, check_same_shape, neighbor_offsets

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class AffinityParams:
    # Normalised 0..255 intensity units. Small enough that noisy soft tissue
    # does not percolate, so growth follows near-uniform air in the lumen.
    sigma: float = 1.0
    theta: float = 0.9

    def __post_init__(self):
        if not self.sigma > 0:
            raise InputError(f"sigma must be positive, got {self.sigma}")
        if not 0.0 < self.theta <= 1.0:
            raise InputError(f"theta must lie in (0, 1], got {self.theta}")


def affinity(a, b, image, params: AffinityParams = AffinityParams()) -> float:
    a, b = tuple(int(v) for v in a), tuple(int(v) for v in b)
    if max(abs(i - j) for i, j in zip(a, b)) > 1:
        return 0.0
    image = np.asarray(image)
    d = float(image[a]) - float(image[b])
    return math.exp(-d * d / (2.0 * params.sigma**2))


def connectedness_map(image, seeds, region, params: AffinityParams = AffinityParams(), floor: float = 0.0) -> np.ndarray:
    """Max-min path strength from ``seeds`` to every voxel of ``region``.

    Paths stay inside ``region``; seeds outside the region are ignored.
    Propagation is a widest-path variant of Dijkstra's algorithm. With
    ``floor > 0`` links weaker than ``floor`` are never followed; strengths
    at or above ``floor`` are still exact, weaker ones read 0.
    """
    check_same_shape(image=image, seeds=seeds, region=region)
    seeds = as_mask(seeds, "seeds")
    region = as_mask(region, "region")
    if not region.any():
        raise InputError("region is empty")
    seeds = seeds & region
    if not seeds.any():
        raise InputError("no seed voxel inside the region")

    # one voxel of padding so neighbour indices never leave the array
    img = np.pad(np.asarray(image, dtype=np.float64), 1).ravel()
    reg = np.pad(region, 1).ravel()
    shape = tuple(n + 2 for n in region.shape)
    strides = (shape[1] * shape[2], shape[2], 1)
    steps = [sum(o * s for o, s in zip(off, strides)) for off in neighbor_offsets().offsets]
    inv2s2 = 1.0 / (2.0 * params.sigma**2)

    strength = np.zeros(img.size, dtype=np.float64)
    seed_idx = np.flatnonzero(np.pad(seeds, 1).ravel())
    strength[seed_idx] = 1.0
    heap = [(-1.0, int(i)) for i in seed_idx]
    heapq.heapify(heap)
    exp = math.exp
    while heap:
        neg, i = heapq.heappop(heap)
        s = -neg
        if s < strength[i]:
            continue
        vi = img[i]
        for step in steps:
            j = i + step
            if not reg[j]:
                continue
            d = vi - img[j]
            c = exp(-d * d * inv2s2)
            if c > s:
                c = s
            if c > strength[j] and c >= floor:
                strength[j] = c
                heapq.heappush(heap, (-c, j))
    return strength.reshape(shape)[1:-1, 1:-1, 1:-1]


def consolidate_candidates(candidates, image, lungmask, params: AffinityParams = AffinityParams()) -> np.ndarray:
    """Restrict candidates to the lung and grow them by fuzzy connectedness.

    Adds every lung voxel whose connectedness to the candidates reaches
    ``params.theta``. Empty candidates give an empty mask.
    """
    check_same_shape(candidates=candidates, image=image, lungmask=lungmask)
    cand = as_mask(candidates, "candidates")
    lung = as_mask(lungmask, "lungmask")
    seeds = cand & lung
    if not seeds.any():
        log.warning("no airway candidates inside the lung mask; consolidation skipped")
        return np.zeros_like(seeds)
    strength = connectedness_map(image, seeds, lung, params, floor=params.theta)
    return seeds | (strength >= params.theta)
