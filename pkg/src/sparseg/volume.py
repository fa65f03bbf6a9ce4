"""Volumetric containers, MetaImage I/O and small mask utilities.

Arrays are indexed ``data[x, y, z]``. On disk the raw payload is x-fastest,
i.e. element ``x + nx*(y + ny*z)``, which is Fortran order for that indexing.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path
from typing import Tuple

import numpy as np
from scipy import ndimage

from .errors import EmptyInputError, FormatError

Triple = Tuple[float, float, float]

_ELEMENT_TYPES = {
    "MET_SHORT": np.dtype("<i2"),
    "MET_UCHAR": np.dtype("u1"),
    "MET_FLOAT": np.dtype("<f4"),
}


def _as_triple(values, name: str) -> Triple:
    out = tuple(float(v) for v in values)
    if len(out) != 3:
        raise ValueError(f"{name} must have 3 components, got {len(out)}")
    return out  # type: ignore[return-value]


@dataclass(frozen=True, eq=False)
class Volume3D:
    """Scalar volume with physical geometry (spacing and origin in mm)."""

    data: np.ndarray
    spacing: Triple = (1.0, 1.0, 1.0)
    origin: Triple = (0.0, 0.0, 0.0)

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 3 or min(data.shape) < 1:
            raise ValueError(f"expected a non-empty 3D array, got shape {data.shape}")
        spacing = _as_triple(self.spacing, "spacing")
        if min(spacing) <= 0:
            raise ValueError(f"spacing must be strictly positive, got {spacing}")
        data = self._coerce(data)
        data.setflags(write=False)
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "spacing", spacing)
        object.__setattr__(self, "origin", _as_triple(self.origin, "origin"))

    @staticmethod
    def _coerce(data: np.ndarray) -> np.ndarray:
        return np.array(data, dtype=np.float64)

    @property
    def dims(self) -> Tuple[int, int, int]:
        return tuple(int(n) for n in self.data.shape)  # type: ignore[return-value]

    @property
    def voxel_volume(self) -> float:
        return float(np.prod(self.spacing))

    def same_geometry(self, other: "Volume3D") -> bool:
        return (
            self.dims == other.dims
            and np.allclose(self.spacing, other.spacing)
            and np.allclose(self.origin, other.origin)
        )

    def with_data(self, data: np.ndarray) -> "Volume3D":
        return Volume3D(data, self.spacing, self.origin)

    def linear(self) -> np.ndarray:
        """Data linearized x-fastest."""
        return self.data.ravel(order="F")


@dataclass(frozen=True, eq=False)
class Mask3D(Volume3D):
    """Binary volume sharing the geometry conventions of :class:`Volume3D`."""

    @staticmethod
    def _coerce(data: np.ndarray) -> np.ndarray:
        return np.array(data, dtype=bool)

    @classmethod
    def like(cls, vol: Volume3D, data: np.ndarray) -> "Mask3D":
        return cls(data, vol.spacing, vol.origin)

    def with_data(self, data: np.ndarray) -> "Mask3D":
        return Mask3D(data, self.spacing, self.origin)

    @property
    def count(self) -> int:
        return int(self.data.sum())


# --------------------------------------------------------------------------
# MetaImage


def _parse_header(path: Path) -> dict:
    header = {}
    for line in path.read_text().splitlines():
        if "=" not in line:
            continue
        key, value = line.split("=", 1)
        header[key.strip()] = value.strip()
    return header


def load_metaimage(path) -> Volume3D:
    """Read a 3D ``.mhd`` header and its detached raw file.

    Returns a :class:`Volume3D` with float64 data. ``MET_UCHAR`` files with
    values in {0, 1} are returned as volumes too; use :func:`load_mask` to get
    a :class:`Mask3D`.
    """
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"no such header: {path}")
    header = _parse_header(path)

    ndims = int(header.get("NDims", "3"))
    if ndims != 3:
        raise FormatError(f"{path}: only 3D images are supported (NDims={ndims})")
    if header.get("CompressedData", "False").lower() == "true":
        raise FormatError(f"{path}: compressed MetaImage is not supported")
    etype = header.get("ElementType")
    if etype not in _ELEMENT_TYPES:
        raise FormatError(f"{path}: unsupported ElementType {etype!r}")
    try:
        dims = tuple(int(v) for v in header["DimSize"].split())
    except KeyError as exc:
        raise FormatError(f"{path}: missing DimSize") from exc
    if len(dims) != 3 or min(dims) < 1:
        raise FormatError(f"{path}: bad DimSize {header['DimSize']!r}")
    spacing = tuple(float(v) for v in header.get("ElementSpacing", "1 1 1").split())
    origin = tuple(float(v) for v in header.get("Offset", header.get("Origin", "0 0 0")).split())

    data_file = header.get("ElementDataFile")
    if data_file is None or data_file == "LOCAL":
        raise FormatError(f"{path}: only detached raw files are supported")
    raw_path = path.parent / data_file

    dtype = _ELEMENT_TYPES[etype]
    msb = header.get("ElementByteOrderMSB", header.get("BinaryDataByteOrderMSB", "False"))
    if msb.lower() == "true":
        dtype = dtype.newbyteorder(">")

    count = dims[0] * dims[1] * dims[2]
    expected = count * dtype.itemsize
    try:
        size = os.path.getsize(raw_path)
    except OSError as exc:
        raise FileNotFoundError(f"missing raw file {raw_path}") from exc
    if size != expected:
        raise OSError(f"{raw_path}: expected {expected} bytes, found {size}")
    flat = np.fromfile(raw_path, dtype=dtype, count=count)
    return Volume3D(flat.reshape(dims, order="F"), spacing, origin)


def load_mask(path) -> Mask3D:
    vol = load_metaimage(path)
    return Mask3D(vol.data != 0, vol.spacing, vol.origin)


def _fmt(values) -> str:
    return " ".join(repr(float(v)) if not float(v).is_integer() else str(float(v)) for v in values)


def save_metaimage(vol: Volume3D, path, element_type: str | None = None) -> None:
    """Write ``vol`` as an ``.mhd`` header plus ``.raw`` data beside it.

    The element type defaults to MET_UCHAR for masks and MET_FLOAT otherwise.
    MET_FLOAT stores float32, so only float32-representable data round-trips
    exactly.
    """
    if path is None or str(path) == "":
        raise OSError("empty output path")
    path = Path(path)
    if element_type is None:
        element_type = "MET_UCHAR" if isinstance(vol, Mask3D) else "MET_FLOAT"
    if element_type not in _ELEMENT_TYPES:
        raise FormatError(f"unsupported ElementType {element_type!r}")
    raw_path = path.with_suffix(".raw")
    lines = [
        "ObjectType = Image",
        "NDims = 3",
        "BinaryData = True",
        "BinaryDataByteOrderMSB = False",
        "ElementByteOrderMSB = False",
        "CompressedData = False",
        f"Offset = {_fmt(vol.origin)}",
        f"ElementSpacing = {_fmt(vol.spacing)}",
        f"DimSize = {' '.join(str(n) for n in vol.dims)}",
        f"ElementType = {element_type}",
        f"ElementDataFile = {raw_path.name}",
    ]
    payload = np.asarray(vol.data).astype(_ELEMENT_TYPES[element_type])
    path.write_text("\n".join(lines) + "\n")
    payload.ravel(order="F").tofile(raw_path)


# --------------------------------------------------------------------------
# Intensity and mask helpers


def window_to_8bit(vol: Volume3D, center: float = 50.0, width: float = 350.0) -> Volume3D:
    """Map ``[center - width/2, center + width/2]`` linearly onto [0, 255].

    Values are clamped and rounded half-up, stored as floats.
    """
    if width <= 0:
        raise ValueError("window width must be positive")
    lo = center - width / 2.0
    scaled = (vol.data - lo) * (255.0 / width)
    scaled = np.floor(np.clip(scaled, 0.0, 255.0) + 0.5)
    return vol.with_data(np.minimum(scaled, 255.0))


_STRUCTURES = {
    6: ndimage.generate_binary_structure(3, 1),
    26: ndimage.generate_binary_structure(3, 3),
}


def connected_components(mask: Mask3D | np.ndarray, connectivity: int = 26):
    """Label foreground components.

    Returns ``(labels, sizes)`` where ``labels`` is an int array (0 is
    background, components numbered from 1) and ``sizes[i]`` is the voxel
    count of component ``i + 1``.
    """
    if connectivity not in _STRUCTURES:
        raise ValueError("connectivity must be 6 or 26")
    data = mask.data if isinstance(mask, Volume3D) else np.asarray(mask, dtype=bool)
    labels, n = ndimage.label(data, structure=_STRUCTURES[connectivity])
    sizes = np.bincount(labels.ravel(), minlength=n + 1)[1:]
    return labels, sizes


def largest_component(mask: np.ndarray, connectivity: int = 26) -> np.ndarray:
    labels, sizes = connected_components(mask, connectivity)
    if sizes.size == 0:
        return np.zeros_like(mask, dtype=bool)
    # argmax picks the lowest label on ties, which keeps this deterministic
    return labels == int(np.argmax(sizes)) + 1


def centroid(mask: Mask3D | np.ndarray) -> Tuple[float, float, float]:
    """Mean voxel coordinate (x, y, z) of the foreground."""
    data = mask.data if isinstance(mask, Volume3D) else np.asarray(mask, dtype=bool)
    coords = np.argwhere(data)
    if coords.size == 0:
        raise EmptyInputError("centroid of an empty mask")
    return tuple(float(c) for c in coords.mean(axis=0))  # type: ignore[return-value]


def bounding_box(data: np.ndarray):
    """Half-open ``(lo, hi)`` index bounds of the foreground, per axis."""
    coords = np.argwhere(data)
    if coords.size == 0:
        raise EmptyInputError("bounding box of an empty mask")
    return tuple(int(v) for v in coords.min(axis=0)), tuple(int(v) + 1 for v in coords.max(axis=0))
