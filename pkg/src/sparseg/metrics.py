"""SLiver07-style segmentation metrics and challenge scores.

Scores map a metric value linearly onto ``100 - 25 * value / reference``,
clamped at zero. The per-metric references are least-squares fits to the
published per-case (value, score) pairs in ``TABLE1``.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from functools import lru_cache

import numpy as np
from scipy import ndimage

from .errors import EmptyInputError, ShapeError
from .volume import Mask3D

METRICS = ("voe", "vd", "avgd", "rmsd", "maxd")

# Per test case: VOE, score, VD, score, AvgD, score, RMSD, score, MaxD, score, total
TABLE1 = np.array([
    [6.74, 73.7, 2.45, 87.0, 0.94, 76.4, 1.48, 79.5, 14.98, 80.3, 79.4],
    [7.49, 70.7, 3.35, 82.2, 1.10, 72.5, 2.18, 69.7, 25.61, 66.3, 72.3],
    [5.30, 79.3, 0.92, 95.1, 1.01, 74.7, 1.57, 78.2, 22.21, 70.8, 79.6],
    [6.32, 75.3, -0.81, 95.7, 0.92, 76.9, 1.55, 78.4, 13.98, 81.6, 81.6],
    [6.20, 75.8, 1.62, 91.4, 1.02, 74.5, 1.90, 73.7, 19.40, 74.5, 78.0],
    [6.55, 74.4, -0.15, 99.2, 0.99, 75.3, 1.51, 79.0, 13.14, 82.7, 82.1],
    [6.30, 75.4, 3.70, 80.3, 0.89, 77.8, 1.33, 81.6, 10.34, 86.4, 80.3],
    [6.17, 75.9, 3.39, 82.0, 0.97, 75.8, 1.51, 79.0, 11.81, 84.5, 79.4],
    [7.53, 70.6, 1.92, 89.8, 0.88, 78.0, 1.36, 81.2, 17.09, 77.5, 79.4],
    [5.78, 77.4, -1.05, 94.4, 0.81, 79.8, 1.40, 80.6, 10.61, 86.0, 83.7],
])
TABLE1_AVG = np.array([6.44, 74.9, 1.53, 89.7, 0.95, 76.3, 1.58, 78.1, 15.92, 79.1, 79.6])


@lru_cache(maxsize=None)
def reference_values() -> dict:
    """Fit ``ref`` per metric: minimize sum (score - (100 - 25 |v| / ref))^2 over 1/ref."""
    refs = {}
    for m, name in enumerate(METRICS):
        a = 25.0 * np.abs(TABLE1[:, 2 * m])
        b = 100.0 - TABLE1[:, 2 * m + 1]
        refs[name] = float((a @ a) / (a @ b))
    return refs


def score(metric: str, value: float) -> float:
    refs = reference_values()
    if metric not in refs:
        raise KeyError(f"unknown metric {metric!r}")
    return max(0.0, 100.0 - 25.0 * abs(float(value)) / refs[metric])


def _pair(h, t):
    hd = h.data if isinstance(h, Mask3D) else np.asarray(h, dtype=bool)
    td = t.data if isinstance(t, Mask3D) else np.asarray(t, dtype=bool)
    if hd.shape != td.shape:
        raise ShapeError(f"mask shapes differ: {hd.shape} vs {td.shape}")
    if isinstance(h, Mask3D) and isinstance(t, Mask3D) and not h.same_geometry(t):
        raise ShapeError("mask geometries differ")
    return hd, td


def voe(h, t) -> float:
    hd, td = _pair(h, t)
    union = np.count_nonzero(hd | td)
    if union == 0:
        raise EmptyInputError("both masks are empty")
    inter = np.count_nonzero(hd & td)
    return 100.0 * (1.0 - inter / union)


def vd(h, t) -> float:
    hd, td = _pair(h, t)
    nt = np.count_nonzero(td)
    if nt == 0:
        raise EmptyInputError("reference mask is empty")
    return 100.0 * (np.count_nonzero(hd) - nt) / nt


def surface(mask: np.ndarray) -> np.ndarray:
    """Foreground voxels with a 6-neighbour in the background or off the volume."""
    padded = np.pad(mask, 1, constant_values=False)
    eroded = ndimage.binary_erosion(padded, structure=ndimage.generate_binary_structure(3, 1))
    return (padded & ~eroded)[1:-1, 1:-1, 1:-1]


def voxel_distance(a: np.ndarray, b: np.ndarray, spacing) -> np.ndarray:
    """Euclidean distance in mm between integer index rows of ``a`` and ``b``."""
    diff = (np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64)) * np.asarray(spacing)
    return np.sqrt(np.sum(diff * diff, axis=-1))


def _directed(src_surface, dst_surface, spacing):
    _, idx = ndimage.distance_transform_edt(~dst_surface, sampling=spacing, return_indices=True)
    points = np.argwhere(src_surface)
    nearest = idx[:, points[:, 0], points[:, 1], points[:, 2]].T
    return voxel_distance(points, nearest, spacing)


def surface_distances(h, t, spacing=None) -> np.ndarray:
    """Distances from every surface voxel of each mask to the other's surface."""
    hd, td = _pair(h, t)
    if spacing is None:
        spacing = h.spacing if isinstance(h, Mask3D) else (1.0, 1.0, 1.0)
    if not hd.any() or not td.any():
        raise EmptyInputError("surface distance needs two non-empty masks")
    sh, st = surface(hd), surface(td)
    return np.concatenate([_directed(sh, st, spacing), _directed(st, sh, spacing)])


def _check(distances):
    d = np.asarray(distances, dtype=np.float64)
    if d.size == 0:
        raise EmptyInputError("no distances")
    return d


def avgd(distances) -> float:
    return float(np.mean(_check(distances)))


def rmsd(distances) -> float:
    d = _check(distances)
    return float(np.sqrt(np.mean(d * d)))


def maxd(distances) -> float:
    return float(np.max(_check(distances)))


@dataclass
class MetricsReport:
    voe: float
    vd: float
    avgd: float
    rmsd: float
    maxd: float
    scores: dict = field(default_factory=dict)
    total: float = 0.0

    @classmethod
    def from_values(cls, voe, vd, avgd, rmsd, maxd) -> "MetricsReport":
        values = dict(voe=voe, vd=vd, avgd=avgd, rmsd=rmsd, maxd=maxd)
        scores = {name: score(name, v) for name, v in values.items()}
        return cls(**values, scores=scores, total=float(np.mean(list(scores.values()))))

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)

    def table(self) -> str:
        header = f"{'VOE[%]':>8} {'Scr':>6} {'VD[%]':>8} {'Scr':>6} {'AvgD[mm]':>9} {'Scr':>6} " \
                 f"{'RMSD[mm]':>9} {'Scr':>6} {'MaxD[mm]':>9} {'Scr':>6} {'Total':>6}"
        s = self.scores
        row = (f"{self.voe:8.2f} {s['voe']:6.1f} {self.vd:8.2f} {s['vd']:6.1f} "
               f"{self.avgd:9.2f} {s['avgd']:6.1f} {self.rmsd:9.2f} {s['rmsd']:6.1f} "
               f"{self.maxd:9.2f} {s['maxd']:6.1f} {self.total:6.1f}")
        return header + "\n" + row


def evaluate(h, t, spacing=None) -> MetricsReport:
    """All five metrics of result ``h`` against reference ``t``, with scores."""
    d = surface_distances(h, t, spacing)
    return MetricsReport.from_values(voe(h, t), vd(h, t), avgd(d), rmsd(d), maxd(d))


def mean_report(reports) -> MetricsReport:
    """Per-case averages; scores and total average the per-case scores."""
    reports = list(reports)
    if not reports:
        raise EmptyInputError("no reports")
    values = {name: float(np.mean([getattr(r, name) for r in reports])) for name in METRICS}
    scores = {name: float(np.mean([r.scores[name] for r in reports])) for name in METRICS}
    return MetricsReport(**values, scores=scores, total=float(np.mean([r.total for r in reports])))
