"""Automatic seed placement: threshold, keep the largest right-side organ, box it."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Tuple

import numpy as np
from scipy import ndimage

from .errors import LocalizationError
from .volume import Mask3D, Volume3D, centroid, largest_component

HU_BAND = (40.0, 60.0)
GRAY_BAND = (125.0, 155.0)
SEED_SIDE = 16


@dataclass(frozen=True)
class SeedRegion:
    center: Tuple[int, int, int]
    lo: Tuple[int, int, int]
    hi: Tuple[int, int, int]
    centroid: Tuple[float, float, float] | None = None

    def mask(self, dims) -> np.ndarray:
        m = np.zeros(dims, dtype=bool)
        m[self.lo[0]:self.hi[0], self.lo[1]:self.hi[1], self.lo[2]:self.hi[2]] = True
        return m

    def __str__(self) -> str:
        c, lo, hi = self.center, self.lo, self.hi
        return (f"center {c[0]} {c[1]} {c[2]}; "
                f"box {lo[0]} {lo[1]} {lo[2]} {hi[0]} {hi[1]} {hi[2]}")


def majority_filter(mask: np.ndarray) -> np.ndarray:
    """One 3x3x3 majority vote (at least 14 of 27), borders replicated."""
    votes = ndimage.uniform_filter(mask.astype(np.float64), size=3, mode="nearest") * 27.0
    return votes > 13.5


def threshold_liver(vol: Volume3D, mode: str = "hu", band=None) -> Mask3D:
    """Voxels inside the liver intensity band, majority-smoothed once.

    ``mode`` is ``"hu"`` (band +40..+60 HU) or ``"gray"`` (8-bit band 125..155).
    """
    if band is None:
        if mode == "hu":
            band = HU_BAND
        elif mode == "gray":
            band = GRAY_BAND
        else:
            raise ValueError(f"unknown threshold mode {mode!r}")
    raw = (vol.data >= band[0]) & (vol.data <= band[1])
    return Mask3D.like(vol, majority_filter(raw))


def seed_box(center, dims, side: int = SEED_SIDE) -> SeedRegion:
    c = tuple(int(np.floor(v + 0.5)) for v in center)
    half = side // 2
    lo = tuple(max(0, ci - half) for ci in c)
    hi = tuple(min(n, ci - half + side) for ci, n in zip(c, dims))
    return SeedRegion(c, lo, hi, tuple(float(v) for v in center))


def right_half(dims, flip_lr: bool = False) -> np.ndarray:
    """Patient-right half: x < floor(nx/2), or the rest when ``flip_lr``."""
    split = dims[0] // 2
    half = np.zeros(dims, dtype=bool)
    if flip_lr:
        half[split:] = True
    else:
        half[:split] = True
    return half


def localize(vol: Volume3D, mode: str = "hu", flip_lr: bool = False, fallback: bool = False,
             side: int = SEED_SIDE) -> SeedRegion:
    """Seed box around the centroid of the largest thresholded right-side component.

    Raises :class:`LocalizationError` if nothing survives on the right half,
    unless ``fallback`` is set, in which case the whole volume is searched.
    """
    mask = threshold_liver(vol, mode).data
    candidates = mask & right_half(vol.dims, flip_lr)
    if not candidates.any():
        if not (fallback and mask.any()):
            raise LocalizationError("no liver-range voxels on the right side")
        candidates = mask
    organ = largest_component(candidates, 26)
    return seed_box(centroid(organ), vol.dims, side)
