"""CT preprocessing: lung field extraction, lung distance map, HU windowing."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import EmptyResultError, InputError
from .voxelcore import as_mask

LUNG_THRESHOLD_HU = -600.0
HULL_RATIO = 1.5
MIN_COMPONENT_FRACTION = 1e-3


@dataclass(frozen=True)
class HUWindow:
    lo: float = -1000.0
    hi: float = 600.0
    out_lo: float = 0.0
    out_hi: float = 255.0

    def __post_init__(self):
        if not self.lo < self.hi:
            raise InputError(f"HU window needs lo < hi, got [{self.lo}, {self.hi}]")


def gaussian_smooth_slices(volume, sigma: float = 1.0) -> np.ndarray:
    """Smooth every axial (H, W) slice independently.

    Kernel radius is ``ceil(3 * sigma)``; borders are reflected.
    """
    if not sigma > 0:
        raise InputError(f"sigma must be positive, got {sigma}")
    v = np.asarray(volume, dtype=np.float64)
    radius = math.ceil(3 * sigma)
    return ndimage.gaussian_filter(v, sigma=(0.0, sigma, sigma), mode="reflect", radius=(0, radius, radius))


def threshold_binarize(volume, thr: float = LUNG_THRESHOLD_HU) -> np.ndarray:
    return np.asarray(volume) < thr


_STRUCT26 = np.ones((3, 3, 3), dtype=bool)


def connected_components_3d(mask) -> tuple[np.ndarray, np.ndarray]:
    """26-connected labelling.

    Returns ``(labels, sizes)`` where labels are numbered ``1..K`` in raster
    order of each component's first voxel and ``sizes[k - 1]`` is the voxel
    count of component ``k``.
    """
    m = as_mask(mask)
    labels, k = ndimage.label(m, structure=_STRUCT26)
    sizes = np.bincount(labels.ravel(), minlength=k + 1)[1:]
    return labels, sizes


def _hull_vertices(points: np.ndarray) -> list[tuple[int, int]]:
    # Andrew's monotone chain, counter-clockwise, collinear points dropped.
    pts = sorted(set(map(tuple, points.tolist())))
    if len(pts) <= 2:
        return pts

    def cross(o, a, b):
        return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])

    lower: list = []
    for p in pts:
        while len(lower) >= 2 and cross(lower[-2], lower[-1], p) <= 0:
            lower.pop()
        lower.append(p)
    upper: list = []
    for p in reversed(pts):
        while len(upper) >= 2 and cross(upper[-2], upper[-1], p) <= 0:
            upper.pop()
        upper.append(p)
    return lower[:-1] + upper[:-1]


def filled_convex_hull(m2d) -> np.ndarray:
    """Pixels whose centres lie in the convex hull of the set pixels.

    Hull edges are inclusive, so the result always contains the input.
    Arithmetic is exact integer cross products.
    """
    m = np.asarray(m2d, dtype=bool)
    out = np.zeros_like(m)
    pts = np.argwhere(m)
    if len(pts) == 0:
        return out
    verts = _hull_vertices(pts)
    (r0, c0), (r1, c1) = pts.min(axis=0), pts.max(axis=0)
    rr, cc = np.mgrid[r0 : r1 + 1, c0 : c1 + 1]
    inside = np.ones(rr.shape, dtype=bool)
    n = len(verts)
    for k in range(n):
        (ar, ac), (br, bc) = verts[k], verts[(k + 1) % n]
        inside &= (br - ar) * (cc - ac) - (bc - ac) * (rr - ar) >= 0
    out[r0 : r1 + 1, c0 : c1 + 1] = inside
    return out


def convex_hull_repair_slice(m2d, ratio: float = HULL_RATIO) -> np.ndarray:
    """Replace a slice by its filled hull when the hull is ``ratio`` x larger."""
    m = np.asarray(m2d, dtype=bool)
    area = int(m.sum())
    if area == 0:
        return m.copy()
    hull = filled_convex_hull(m)
    if hull.sum() >= ratio * area:
        return hull
    return m.copy()


def _touches_axial_border(labels: np.ndarray) -> set[int]:
    edge = np.concatenate(
        [labels[:, 0, :].ravel(), labels[:, -1, :].ravel(), labels[:, :, 0].ravel(), labels[:, :, -1].ravel()]
    )
    return set(np.unique(edge).tolist()) - {0}


def extract_lung_mask(
    ct,
    sigma: float = 1.0,
    threshold: float = LUNG_THRESHOLD_HU,
    hull_ratio: float = HULL_RATIO,
    min_fraction: float = MIN_COMPONENT_FRACTION,
) -> np.ndarray:
    """Lung field of a CT volume in Hounsfield units.

    Smooth each slice, keep voxels below ``threshold``, drop air touching
    the axial border of the volume (air outside the body) and specks
    smaller than ``min_fraction`` of the volume, then keep the two largest
    components. Each slice is finally repaired with its convex hull (when
    the hull is ``hull_ratio`` times larger) and its enclosed holes filled,
    which pulls in airways and vessels surrounded by lung.
    """
    ct = np.asarray(ct, dtype=np.float64)
    if ct.ndim != 3:
        raise InputError(f"CT must be 3-D, got shape {ct.shape}")
    air = threshold_binarize(gaussian_smooth_slices(ct, sigma), threshold)
    labels, sizes = connected_components_3d(air)
    exterior = _touches_axial_border(labels)
    min_size = min_fraction * ct.size
    candidates = [k for k in range(1, len(sizes) + 1) if k not in exterior and sizes[k - 1] >= min_size]
    if not candidates:
        raise EmptyResultError("no enclosed air component found; cannot extract a lung mask")
    # largest first; ties resolved by label order
    candidates.sort(key=lambda k: (-sizes[k - 1], k))
    lung = np.isin(labels, candidates[:2])
    for z in range(lung.shape[0]):
        if lung[z].any():
            lung[z] = ndimage.binary_fill_holes(convex_hull_repair_slice(lung[z], hull_ratio))
    return lung


def distance_transform(mask) -> np.ndarray:
    """Exact Euclidean distance (voxel units) to the nearest background voxel.

    Everything outside the grid counts as background, so a mask touching
    the border still gets finite distances.
    """
    m = as_mask(mask)
    padded = np.pad(m, 1, constant_values=False)
    return ndimage.distance_transform_edt(padded)[1:-1, 1:-1, 1:-1]


def clip_normalize(ct, window: HUWindow = HUWindow()) -> np.ndarray:
    v = np.clip(np.asarray(ct, dtype=np.float64), window.lo, window.hi)
    return (v - window.lo) / (window.hi - window.lo) * (window.out_hi - window.out_lo) + window.out_lo


def lung_bbox(mask) -> tuple[tuple[int, int], ...]:
    """Half-open ``((z0, z1), (y0, y1), (x0, x1))`` bounding box of a mask."""
    m = as_mask(mask)
    if not m.any():
        raise InputError("empty mask has no bounding box")
    box = []
    for axis in range(3):
        other = tuple(a for a in range(3) if a != axis)
        idx = np.flatnonzero(m.any(axis=other))
        box.append((int(idx[0]), int(idx[-1]) + 1))
    return tuple(box)
