"""Designated-pixel re-localization by exhaustive block matching.

At desk-scale resolutions an exact SSD search over integer displacements is
fast and dependency-free. Tracking follows whatever surface currently covers
the pixel, so the pixel estimate deliberately latches onto the pusher when it
occludes an object (the known occlusion failure mode of this tracking style).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .imgrid import Image


@dataclass(frozen=True)
class TrackConfig:
    patch_radius: int = 3
    search_radius: int = 4
    clip: float | None = 0.5   # per-pixel |difference| cap; None = plain SSD

    def __post_init__(self):
        if self.patch_radius < 1 or self.search_radius < 1:
            raise ValueError("patch and search radii must be >= 1")


def _patch(img: np.ndarray, x: int, y: int, radius: int) -> np.ndarray:
    """Edge-clamped square patch around (x, y)."""
    h, w = img.shape
    ys = np.clip(np.arange(y - radius, y + radius + 1), 0, h - 1)
    xs = np.clip(np.arange(x - radius, x + radius + 1), 0, w - 1)
    return img[np.ix_(ys, xs)]


def track(img_prev: Image, img_cur: Image, pixel, cfg: TrackConfig = TrackConfig()):
    """Best integer displacement of the patch around pixel, by SSD.

    Per-pixel differences are optionally capped at cfg.clip before squaring
    so the bright pusher intruding on the patch cannot dominate the cost.
    Ties break toward the smallest displacement norm, then lexicographically
    by (dy, dx); the returned pixel is clamped in bounds.
    """
    h, w = img_cur.data.shape
    x, y = int(pixel[0]), int(pixel[1])
    ref = _patch(img_prev.data, x, y, cfg.patch_radius)
    r = cfg.search_radius
    best = None
    for dy in range(-r, r + 1):
        for dx in range(-r, r + 1):
            cand = _patch(img_cur.data, x + dx, y + dy, cfg.patch_radius)
            diff = np.abs(cand - ref)
            if cfg.clip is not None:
                diff = np.minimum(diff, cfg.clip)
            ssd = float(np.sum(diff * diff))
            key = (ssd, dx * dx + dy * dy, dy, dx)
            if best is None or key < best[0]:
                best = (key, dx, dy)
    _, dx, dy = best
    return (int(np.clip(x + dx, 0, w - 1)), int(np.clip(y + dy, 0, h - 1)))
