"""Synthetic abdominal phantoms with known liver truth, for tests and demos."""

from __future__ import annotations

import numpy as np
from scipy import ndimage

from .volume import Mask3D, Volume3D


def _texture(rng, shape, sigma=1.0):
    noise = ndimage.gaussian_filter(rng.standard_normal(shape), sigma)
    return noise / noise.std()


def make_phantom(size: int = 64, seed: int = 0, spacing=(1.0, 1.0, 1.0), with_spleen: bool = True):
    """Body cylinder with a textured liver ellipsoid on the patient-right (low x) side.

    Liver is about 50 HU with fine texture, surrounding tissue about 150 HU
    with coarser texture, air outside the body. An optional smaller organ in
    the liver band sits on the left. Returns ``(volume, liver_truth)``.
    """
    rng = np.random.default_rng(seed)
    n = size
    x, y, z = np.meshgrid(*(np.arange(n, dtype=np.float64),) * 3, indexing="ij")
    s = n / 64.0

    body = ((x - n / 2) / (0.47 * n)) ** 2 + ((y - n / 2) / (0.44 * n)) ** 2 <= 1.0
    jitter = rng.uniform(-1.5, 1.5, size=3) * s
    center = np.array([18.0, 32.0, 32.0]) * s + jitter
    radii = np.array([12.0, 14.0, 16.0]) * s * rng.uniform(0.92, 1.08, size=3)
    liver = (((x - center[0]) / radii[0]) ** 2 + ((y - center[1]) / radii[1]) ** 2
             + ((z - center[2]) / radii[2]) ** 2) <= 1.0
    liver &= body

    data = np.full((n, n, n), -1000.0)
    data[body] = 150.0 + 15.0 * _texture(rng, (n, n, n), 2.0)[body]
    data[liver] = 50.0 + 6.0 * _texture(rng, (n, n, n), 1.0)[liver]
    if with_spleen:
        sc = np.array([47.0, 30.0, 32.0]) * s
        spleen = ((x - sc[0]) ** 2 + (y - sc[1]) ** 2 + (z - sc[2]) ** 2) <= (6.0 * s) ** 2
        data[spleen & ~liver] = 50.0 + 6.0 * _texture(rng, (n, n, n), 1.0)[spleen & ~liver]
    return Volume3D(data, spacing), Mask3D(liver, spacing)
