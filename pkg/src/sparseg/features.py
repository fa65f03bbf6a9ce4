"""Region feature matrices: GLCM texture, HU statistics, volume topology.

Each column of a feature matrix summarizes one axial slab of a region. The
42 rows are, in order::

    36  texture   9 Haralick features for each offset 0, 45, 90, 135 degrees
     1  hu_mean   mean intensity of the region inside the slab
     5  volume    volume, surface area, Euler number, major/minor axis (whole
                  region, repeated in every column)

Texture is measured on a 32-level quantization of the 8-bit windowed image
with directed (non-symmetric) pairs at distance 1 inside each axial plane.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import EmptyInputError, ShapeError
from .volume import Mask3D, Volume3D, bounding_box, window_to_8bit

N_COLUMNS = 160
N_LEVELS = 32

# (drow, dcol) in an axial image indexed [y, x]
OFFSETS = {0: (0, 1), 45: (1, 1), 90: (1, 0), 135: (1, -1)}

HARALICK_NAMES = (
    "entropy",
    "energy",
    "contrast",
    "homogeneity",
    "sum_mean",
    "correlation",
    "max_probability",
    "inverse_difference_moment",
    "cluster_tendency",
)
VOLUME_NAMES = ("volume", "surface_area", "euler_number", "major_axis", "minor_axis")
ROW_NAMES = tuple(
    [f"{name}_{angle}" for angle in OFFSETS for name in HARALICK_NAMES]
    + ["hu_mean"]
    + list(VOLUME_NAMES)
)
N_FEATURES = len(ROW_NAMES)
TEXTURE_ROWS = slice(0, 36)
HU_ROW = 36


@dataclass(frozen=True)
class GlcmMatrix:
    counts: np.ndarray
    offset: int = 0

    @property
    def levels(self) -> int:
        return self.counts.shape[0]

    @property
    def total(self) -> int:
        return int(self.counts.sum())


def quantize(gray: np.ndarray, levels: int = N_LEVELS) -> np.ndarray:
    """8-bit gray values to integer levels ``0..levels-1``."""
    q = np.floor(np.asarray(gray, dtype=np.float64) * levels / 256.0).astype(np.int64)
    return np.clip(q, 0, levels - 1)


def _pair_views(image: np.ndarray, offset):
    """Aligned views (a, b) such that b[i] sits at a[i] + offset."""
    dr, dc = offset
    nr, nc = image.shape
    r0, r1 = max(0, -dr), nr - max(0, dr)
    c0, c1 = max(0, -dc), nc - max(0, dc)
    a = image[r0:r1, c0:c1]
    b = image[r0 + dr : r1 + dr, c0 + dc : c1 + dc]
    return a, b


def glcm_2d(levels_img: np.ndarray, offset: int, levels: int, mask: np.ndarray | None = None) -> np.ndarray:
    """Directed co-occurrence counts of one quantized image."""
    img = np.asarray(levels_img, dtype=np.int64)
    if mask is None:
        mask = np.ones(img.shape, dtype=bool)
    a, b = _pair_views(img, OFFSETS[offset])
    ma, mb = _pair_views(np.asarray(mask, dtype=bool), OFFSETS[offset])
    valid = ma & mb
    codes = a[valid] * levels + b[valid]
    return np.bincount(codes, minlength=levels * levels).reshape(levels, levels)


def glcm(vol: Volume3D, mask: Mask3D, slices: Sequence[int], offset: int, levels: int = N_LEVELS,
         window=(50.0, 350.0)) -> GlcmMatrix:
    """GLCM accumulated over the in-mask pairs of the given axial slices."""
    if levels < 2:
        raise ValueError("levels must be at least 2")
    q = quantize(window_to_8bit(vol, *window).data, levels)
    counts = _slab_counts(q, mask.data, slices, offset, levels)
    if counts.sum() == 0:
        raise EmptyInputError("slab has no in-mask voxel pairs")
    return GlcmMatrix(counts, offset)


def _slab_counts(q, m, slices, offset, levels):
    counts = np.zeros((levels, levels), dtype=np.int64)
    for z in slices:
        if not m[:, :, z].any():
            continue
        # [x, y] -> [y, x] so that rows run along y
        counts += glcm_2d(q[:, :, z].T, offset, levels, m[:, :, z].T)
    return counts


def haralick(g: GlcmMatrix | np.ndarray) -> np.ndarray:
    """The nine texture features, in ``HARALICK_NAMES`` order.

    With p the normalized matrix, i the row and j the column level::

        entropy          -sum p ln p
        energy            sum p^2
        contrast          sum (i-j)^2 p
        homogeneity       sum p / (1 + |i-j|)
        sum_mean          mu_i = sum i p
        correlation       sum (i-mu_i)(j-mu_j) p / (sigma_i sigma_j), 1 if a sigma is 0
        max_probability   max p
        inverse diff.     sum p / (1 + (i-j)^2)
        cluster_tendency  sum (i + j - mu_i - mu_j)^2 p
    """
    counts = g.counts if isinstance(g, GlcmMatrix) else np.asarray(g)
    total = counts.sum()
    if total <= 0:
        raise EmptyInputError("GLCM has no pairs")
    p = counts / float(total)
    n = p.shape[0]
    i, j = np.meshgrid(np.arange(n, dtype=np.float64), np.arange(n, dtype=np.float64), indexing="ij")
    nz = p > 0
    entropy = float(-np.sum(p[nz] * np.log(p[nz])))
    energy = float(np.sum(p * p))
    diff = i - j
    contrast = float(np.sum(diff * diff * p))
    homogeneity = float(np.sum(p / (1.0 + np.abs(diff))))
    mu_i = float(np.sum(i * p))
    mu_j = float(np.sum(j * p))
    sd_i = np.sqrt(float(np.sum((i - mu_i) ** 2 * p)))
    sd_j = np.sqrt(float(np.sum((j - mu_j) ** 2 * p)))
    if sd_i * sd_j > 0:
        correlation = float(np.sum((i - mu_i) * (j - mu_j) * p)) / (sd_i * sd_j)
    else:
        correlation = 1.0
    max_probability = float(p.max())
    idm = float(np.sum(p / (1.0 + diff * diff)))
    cluster = float(np.sum((i + j - mu_i - mu_j) ** 2 * p))
    return np.array(
        [entropy, energy, contrast, homogeneity, mu_i, correlation, max_probability, idm, cluster]
    )


# --------------------------------------------------------------------------
# Volume properties


def _dilate_corners(m: np.ndarray, axes: Sequence[int]) -> np.ndarray:
    """Occupancy of lattice cells touching a voxel, shifted along ``axes``.

    The input is padded by one on every side; a cell of the output is set if
    any voxel obtained by shifting 0 or -1 along each of ``axes`` is set.
    """
    out = m.copy()
    for ax in axes:
        out = out | np.roll(out, 1, axis=ax)
    return out


def euler_number(mask: np.ndarray) -> int:
    """Euler characteristic V - E + F - C of the closed cubical complex."""
    m = np.pad(np.asarray(mask, dtype=bool), 1)
    cells = int(m.sum())
    faces = sum(int(_dilate_corners(m, [ax]).sum()) for ax in range(3))
    edges = sum(int(_dilate_corners(m, [a for a in range(3) if a != ax]).sum()) for ax in range(3))
    verts = int(_dilate_corners(m, [0, 1, 2]).sum())
    return verts - edges + faces - cells


def surface_area(mask: np.ndarray, spacing) -> float:
    """Total area of voxel faces between foreground and background (mm^2)."""
    m = np.pad(np.asarray(mask, dtype=bool), 1)
    sx, sy, sz = spacing
    face_area = (sy * sz, sx * sz, sx * sy)
    area = 0.0
    for ax in range(3):
        exposed = np.count_nonzero(m != np.roll(m, 1, axis=ax))
        area += exposed * face_area[ax]
    return float(area)


def axis_lengths(mask: np.ndarray, spacing):
    coords = np.argwhere(np.asarray(mask, dtype=bool)) * np.asarray(spacing, dtype=np.float64)
    if len(coords) < 2:
        return 0.0, 0.0
    eig = np.linalg.eigvalsh(np.cov(coords, rowvar=False, bias=True))
    eig = np.clip(eig, 0.0, None)
    return 4.0 * float(np.sqrt(eig[-1])), 4.0 * float(np.sqrt(eig[0]))


def volume_properties(mask: Mask3D | np.ndarray, spacing=None) -> np.ndarray:
    """Volume (mm^3), surface area (mm^2), Euler number, major and minor axis (mm)."""
    if isinstance(mask, Volume3D):
        spacing = mask.spacing if spacing is None else spacing
        data = mask.data
    else:
        data = np.asarray(mask, dtype=bool)
        spacing = (1.0, 1.0, 1.0) if spacing is None else spacing
    count = int(np.count_nonzero(data))
    if count == 0:
        raise EmptyInputError("volume properties of an empty mask")
    major, minor = axis_lengths(data, spacing)
    return np.array(
        [
            count * float(np.prod(spacing)),
            surface_area(data, spacing),
            float(euler_number(data)),
            major,
            minor,
        ]
    )


# --------------------------------------------------------------------------
# Feature matrix


def slab_assignment(z0: int, z1: int, n_columns: int = N_COLUMNS) -> list[list[int]]:
    """Axial slices of ``[z0, z1)`` belonging to each of ``n_columns`` slabs.

    Slice z goes to slab ``floor((z - z0) * n_columns / depth)``. A slab that
    receives no slice (depth < n_columns) takes the slice nearest its center.
    """
    depth = z1 - z0
    if depth < 1:
        raise EmptyInputError("empty z extent")
    slabs: list[list[int]] = [[] for _ in range(n_columns)]
    for z in range(z0, z1):
        slabs[(z - z0) * n_columns // depth].append(z)
    for k, members in enumerate(slabs):
        if not members:
            members.append(z0 + min(depth - 1, int((k + 0.5) * depth / n_columns)))
    return slabs


def slice_to_column(z, z0: int, z1: int, n_columns: int = N_COLUMNS) -> np.ndarray:
    """Column index of axial slice ``z``; slices outside the extent clamp."""
    depth = z1 - z0
    z = np.clip(np.asarray(z) - z0, 0, depth - 1)
    return (z * n_columns) // depth


def _fill_missing(columns: np.ndarray, valid: np.ndarray) -> np.ndarray:
    """Copy each invalid column from the nearest valid one (lower index on ties)."""
    if valid.all() or not valid.any():
        return columns
    idx = np.flatnonzero(valid)
    out = columns.copy()
    for k in np.flatnonzero(~valid):
        out[:, k] = columns[:, idx[np.argmin(np.abs(idx - k))]]
    return out


@dataclass
class FeatureMatrix:
    values: np.ndarray
    slabs: list = field(default_factory=list)
    z_extent: tuple = (0, 0)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.shape != (N_FEATURES, N_COLUMNS):
            raise ShapeError(f"feature matrix must be {N_FEATURES}x{N_COLUMNS}, got {self.values.shape}")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("feature matrix has non-finite entries")

    def save(self, path) -> None:
        """Row-major float64 binary plus a ``.txt`` sidecar naming the rows."""
        path = Path(path)
        self.values.astype("<f8").tofile(path)
        lines = [f"rows = {N_FEATURES}", f"cols = {N_COLUMNS}",
                 f"z_extent = {self.z_extent[0]} {self.z_extent[1]}"]
        lines += [f"row {i} = {name}" for i, name in enumerate(ROW_NAMES)]
        path.with_suffix(path.suffix + ".txt").write_text("\n".join(lines) + "\n")

    @classmethod
    def load(cls, path) -> "FeatureMatrix":
        path = Path(path)
        values = np.fromfile(path, dtype="<f8").reshape(N_FEATURES, N_COLUMNS)
        z_extent = (0, 0)
        sidecar = path.with_suffix(path.suffix + ".txt")
        if sidecar.exists():
            for line in sidecar.read_text().splitlines():
                if line.startswith("z_extent"):
                    z_extent = tuple(int(v) for v in line.split("=")[1].split())
        return cls(values, z_extent=z_extent)


def build_feature_matrix(vol: Volume3D, mask: Mask3D, z_extent=None, window=(50.0, 350.0),
                         levels: int = N_LEVELS) -> FeatureMatrix:
    """42 x 160 region features of ``mask`` over ``vol``.

    ``z_extent`` defaults to the mask's own axial extent; passing another
    region's extent aligns the columns of two matrices slab by slab.
    """
    m = mask.data
    if not m.any():
        raise EmptyInputError("feature matrix of an empty mask")
    if z_extent is None:
        lo, hi = bounding_box(m)
        z_extent = (lo[2], hi[2])
    slabs = slab_assignment(*z_extent)
    q = quantize(window_to_8bit(vol, *window).data, levels)

    values = np.zeros((N_FEATURES, N_COLUMNS))
    for a, angle in enumerate(OFFSETS):
        block = np.zeros((9, N_COLUMNS))
        valid = np.zeros(N_COLUMNS, dtype=bool)
        for k, members in enumerate(slabs):
            counts = _slab_counts(q, m, members, angle, levels)
            if counts.sum() > 0:
                block[:, k] = haralick(counts)
                valid[k] = True
        values[9 * a : 9 * a + 9] = _fill_missing(block, valid)

    hu = np.zeros((1, N_COLUMNS))
    valid = np.zeros(N_COLUMNS, dtype=bool)
    for k, members in enumerate(slabs):
        inside = m[:, :, members]
        if inside.any():
            hu[0, k] = vol.data[:, :, members][inside].mean()
            valid[k] = True
    values[HU_ROW] = _fill_missing(hu, valid)[0]
    values[HU_ROW + 1 :] = volume_properties(m, vol.spacing)[:, None]
    return FeatureMatrix(values, slabs, tuple(z_extent))
