"""Voxel-wise shape prior built from liver mask occupancy patches.

A mask is normalized to its bounding box and resampled to a 16 x 16 x 160
occupancy grid; each axial plane, flattened x-fastest, is one 256-row column.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import sparse
from .errors import EmptyInputError, ShapeError
from .volume import Mask3D, bounding_box

PATCH_SIDE = 16
N_ROWS = PATCH_SIDE * PATCH_SIDE
N_COLUMNS = 160


def _sample_axis(n_out: int, size: int) -> np.ndarray:
    """Coordinates of ``n_out`` cell centers spread over ``[0, size)``."""
    return (np.arange(n_out) + 0.5) * size / n_out - 0.5


def _interp_axis(arr: np.ndarray, coords: np.ndarray, axis: int) -> np.ndarray:
    """Linear interpolation along one axis, edge values replicated.

    Written as ``a + t (b - a)`` so constant runs are reproduced exactly.
    """
    n = arr.shape[axis]
    c = np.clip(coords, 0.0, n - 1)
    i0 = np.minimum(np.floor(c).astype(np.int64), max(n - 2, 0))
    i1 = np.minimum(i0 + 1, n - 1)
    t = c - i0
    shape = [1] * arr.ndim
    shape[axis] = len(coords)
    t = t.reshape(shape)
    a = np.take(arr, i0, axis=axis)
    b = np.take(arr, i1, axis=axis)
    return a + t * (b - a)


def _resample(arr: np.ndarray, out_shape) -> np.ndarray:
    """Separable trilinear resampling of ``arr`` onto a cell-centered grid."""
    out = np.asarray(arr, dtype=np.float64)
    for axis, n_out in enumerate(out_shape):
        out = _interp_axis(out, _sample_axis(n_out, arr.shape[axis]), axis)
    return out


def extract_patch_matrix(mask: Mask3D | np.ndarray, box=None) -> np.ndarray:
    """256 x 160 soft occupancy matrix of ``mask`` inside ``box``.

    ``box`` is ``((x0, y0, z0), (x1, y1, z1))`` half-open; it defaults to the
    mask's bounding box, which makes the result translation invariant.
    """
    data = mask.data if isinstance(mask, Mask3D) else np.asarray(mask, dtype=bool)
    if not data.any():
        raise EmptyInputError("patch matrix of an empty mask")
    lo, hi = bounding_box(data) if box is None else box
    crop = data[lo[0]:hi[0], lo[1]:hi[1], lo[2]:hi[2]]
    grid = np.clip(_resample(crop, (PATCH_SIDE, PATCH_SIDE, N_COLUMNS)), 0.0, 1.0)
    # [x, y, z] -> rows x + 16 y
    return grid.reshape(N_ROWS, N_COLUMNS, order="F")


def patch_to_volume(patch: np.ndarray, box, shape) -> np.ndarray:
    """Resample a patch matrix back onto the voxels of ``box``; zero outside."""
    patch = np.asarray(patch, dtype=np.float64)
    grid = patch.reshape(PATCH_SIDE, PATCH_SIDE, N_COLUMNS, order="F")
    lo, hi = box
    out = np.zeros(shape)
    vals = grid
    for axis in range(3):
        size = hi[axis] - lo[axis]
        n_cells = grid.shape[axis]
        # inverse of _sample_axis
        coords = (np.arange(size) + 0.5) * n_cells / size - 0.5
        vals = _interp_axis(vals, coords, axis)
    out[lo[0]:hi[0], lo[1]:hi[1], lo[2]:hi[2]] = np.clip(vals, 0.0, 1.0)
    return out


def train_shape_dictionary(masks: Sequence, k_s: int = 128, t0: int = 5, iters: int = 30,
                           seed: int = 0) -> sparse.KsvdResult:
    """K-SVD on the pooled patch columns of ``masks``."""
    if len(masks) < 1:
        raise ValueError("need at least one training mask")
    Y = np.hstack([extract_patch_matrix(m) for m in masks])
    result = sparse.ksvd(Y, k_s, t0, iters, seed=seed, label="shape")
    result.dictionary.meta.update({"n_masks": len(masks), "kind": "shape"})
    return result


@dataclass
class ShapeFit:
    alpha: np.ndarray
    e_shape: float
    column_residual: np.ndarray
    objective: list

    @property
    def nnz_per_column(self) -> np.ndarray:
        """Sparsity diagnostic; ideally one atom per column."""
        return np.count_nonzero(self.alpha, axis=0)


def shape_energy(v_t: np.ndarray, d_s, lam: float = 0.7, max_iter: int = 500, tol: float = 1e-10,
                 weights=None) -> ShapeFit:
    """Columnwise ``min ||v - D a||^2 + lam ||a||_1`` and the summed objective."""
    v_t = np.asarray(v_t, dtype=np.float64)
    D = d_s.atoms if isinstance(d_s, sparse.Dictionary) else np.asarray(d_s)
    if v_t.ndim != 2 or v_t.shape[0] != D.shape[0]:
        raise ShapeError(f"patch matrix {v_t.shape} incompatible with dictionary {D.shape}")
    res = sparse.solve_l1_batch(D, v_t, lam, max_iter=max_iter, tol=tol, weights=weights)
    R = v_t - D @ res.codes
    col_res = np.sum(R * R, axis=0)
    e_shape = float(np.sum(col_res) + lam * np.sum(np.abs(res.codes)))
    return ShapeFit(res.codes, e_shape, col_res, res.objective)


def reconstruct_shape(d_s, alpha: np.ndarray) -> np.ndarray:
    return np.clip(sparse.reconstruct(d_s, alpha), 0.0, 1.0)
