"""Synthetic chest phantoms with a known airway tree.

The phantom is a soft-tissue cylinder in air holding two ellipsoidal lungs.
A bifurcating tree of tubes starts in the mediastinum, splits into one main
bronchus per lung and keeps splitting in two inside each lung. Tubes carry
air-filled lumen inside a wall of soft-tissue density.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InputError
from .voxelcore import Volume

# Wall thickness: any 26-step moves at most sqrt(3), so a shell this thick
# keeps lumen and parenchyma from touching.
WALL = math.sqrt(3.0)


@dataclass(frozen=True)
class PhantomConfig:
    shape: tuple[int, int, int] = (64, 64, 64)
    trunk_radius: float = 3.0
    depth: int = 4
    radius_decay: float = 0.75
    branch_angle: tuple[float, float] = (20.0, 40.0)
    hu_lumen: float = -1000.0
    hu_wall: float = -100.0
    hu_parenchyma: float = -850.0
    hu_body: float = 40.0
    hu_air: float = -1000.0
    noise_sd: float = 30.0
    seed: int = 0

    def __post_init__(self):
        if len(self.shape) != 3 or min(self.shape) < 24:
            raise InputError(f"phantom shape must be 3-D with every side >= 24, got {self.shape}")
        if not 0.0 < self.radius_decay < 1.0:
            raise InputError(f"radius_decay must lie in (0, 1), got {self.radius_decay}")
        if self.depth < 1:
            raise InputError(f"depth must be >= 1, got {self.depth}")
        if self.trunk_radius <= 0 or self.noise_sd < 0:
            raise InputError("trunk_radius must be positive and noise_sd non-negative")
        lo, hi = self.branch_angle
        if not 0.0 <= lo <= hi < 90.0:
            raise InputError(f"branch_angle must satisfy 0 <= lo <= hi < 90, got {self.branch_angle}")


@dataclass(frozen=True)
class Branch:
    start: np.ndarray
    end: np.ndarray
    radius: float
    generation: int


def _geometry(shape):
    Z, H, W = shape
    body = (H / 2, W / 2, 0.45 * min(H, W))
    semi = np.array([0.42 * Z, 0.31 * H, 0.15 * W])
    centers = [np.array([0.5 * Z, 0.5 * H, 0.5 * W + s * 0.25 * W]) for s in (-1, 1)]
    return body, centers, semi


def _inside_ellipsoid(p, center, semi, margin: float) -> bool:
    axes = semi - margin
    if (axes <= 0).any():
        return False
    return float(np.sum(((p - center) / axes) ** 2)) <= 1.0


def build_tree(cfg: PhantomConfig, rng) -> list[Branch]:
    """Centre-line segments of the airway tree, parents before children.

    Below the main bronchi every branch splits in two. Children fan out in
    the coronal (Z, H) plane at ``cfg.branch_angle`` degrees either side of
    the parent's in-plane direction, with a small random lateral tilt.
    """
    Z, H, W = cfg.shape
    _, centers, semi = _geometry(cfg.shape)
    top = np.array([0.22 * Z, 0.5 * H, 0.5 * W])
    carina = np.array([0.42 * Z, 0.5 * H, 0.5 * W])
    tree = [Branch(top, carina, cfg.trunk_radius, 0)]
    if cfg.depth == 1:
        return tree

    r1 = cfg.trunk_radius * cfg.radius_decay
    # (branch, lung index) pairs still allowed to split
    frontier = []
    for lung, c in enumerate(centers):
        b = Branch(carina, c + rng.uniform(-1.0, 1.0, size=3), r1, 1)
        tree.append(b)
        frontier.append((b, lung))

    lo, hi = (math.radians(a) for a in cfg.branch_angle)
    for gen in range(2, cfg.depth):
        nxt = []
        for parent, lung in frontier:
            d = parent.end - parent.start
            length = float(np.linalg.norm(d)) * 0.75
            phi = math.atan2(d[1], d[0]) if math.hypot(d[0], d[1]) > 0.3 * np.linalg.norm(d) else 0.0
            radius = parent.radius * cfg.radius_decay
            for sign in (1.0, -1.0):
                child = None
                for attempt in range(60):
                    if attempt and attempt % 20 == 0:
                        length *= 0.7
                    ang = phi + sign * rng.uniform(lo, hi)
                    u = np.array([math.cos(ang), math.sin(ang), rng.uniform(-0.15, 0.15)])
                    end = parent.end + u / np.linalg.norm(u) * length
                    if _inside_ellipsoid(end, centers[lung], semi, radius + WALL + 3.0):
                        child = Branch(parent.end, end, radius, gen)
                        break
                if child is not None:
                    tree.append(child)
                    nxt.append((child, lung))
        frontier = nxt
    return tree


def _segment_distance(grid_pts: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    ab = b - a
    t = np.clip(((grid_pts - a) @ ab) / max(float(ab @ ab), 1e-12), 0.0, 1.0)
    closest = a + t[..., None] * ab
    return np.linalg.norm(grid_pts - closest, axis=-1)


def rasterize_tree(tree: list[Branch], shape) -> tuple[np.ndarray, np.ndarray]:
    """Lumen mask and wall-or-lumen mask of a tree."""
    lumen = np.zeros(shape, dtype=bool)
    shell = np.zeros(shape, dtype=bool)
    for br in tree:
        reach = br.radius + WALL
        lo = np.floor(np.minimum(br.start, br.end) - reach).astype(int)
        hi = np.ceil(np.maximum(br.start, br.end) + reach).astype(int) + 1
        if (lo < 0).any() or (hi > np.array(shape)).any():
            raise InputError("airway tree does not fit inside the phantom volume")
        zz, yy, xx = np.mgrid[lo[0] : hi[0], lo[1] : hi[1], lo[2] : hi[2]]
        pts = np.stack([zz, yy, xx], axis=-1).astype(np.float64)
        dist = _segment_distance(pts, br.start, br.end)
        sl = tuple(slice(a, b) for a, b in zip(lo, hi))
        lumen[sl] |= dist <= br.radius
        shell[sl] |= dist <= reach
    return lumen, shell


def generate(cfg: PhantomConfig = PhantomConfig()) -> tuple[Volume, np.ndarray, np.ndarray]:
    """Return ``(ct, airway, lung)``: CT in HU and the two ground-truth masks.

    Fully determined by ``cfg.seed``.
    """
    rng = np.random.default_rng(cfg.seed)
    tree = build_tree(cfg, rng)
    lumen, shell = rasterize_tree(tree, cfg.shape)

    (cy, cx, radius), centers, semi = _geometry(cfg.shape)
    zz, yy, xx = np.indices(cfg.shape, dtype=np.float64)
    body = (yy - cy) ** 2 + (xx - cx) ** 2 <= radius**2
    lungs = np.zeros(cfg.shape, dtype=bool)
    for c in centers:
        lungs |= ((zz - c[0]) / semi[0]) ** 2 + ((yy - c[1]) / semi[1]) ** 2 + ((xx - c[2]) / semi[2]) ** 2 <= 1.0
    if (shell & ~body).any():
        raise InputError("airway tree leaves the body")

    ct = np.full(cfg.shape, cfg.hu_air, dtype=np.float64)
    ct[body] = cfg.hu_body
    ct[lungs] = cfg.hu_parenchyma
    ct[shell] = cfg.hu_wall
    ct[lumen] = cfg.hu_lumen
    ct += rng.normal(0.0, cfg.noise_sd, size=cfg.shape)
    return Volume(ct.astype(np.float32)), lumen, lungs | shell
