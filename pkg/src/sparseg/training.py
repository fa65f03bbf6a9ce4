"""Training of the liver, non-liver and shape dictionaries from labeled volumes."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence, Tuple

import numpy as np
from scipy import ndimage

from . import features as feat
from . import shapeprior, sparse
from .config import PipelineConfig
from .errors import EmptyInputError, ShapeError
from .levelset import Models, background_shell
from .volume import Mask3D, Volume3D, bounding_box

logger = logging.getLogger(__name__)


def training_regions(liver: np.ndarray, cube_sides=(16, 32), erosion: int = 4):
    """The liver plus partial liver regions resembling intermediate segmentations.

    The level set grows from a small seed box, so the feature dictionaries must
    also describe liver regions smaller than a whole organ: the liver cropped
    to cubes around its centroid and an eroded liver.
    """
    regions = [liver]
    c = np.floor(np.argwhere(liver).mean(axis=0) + 0.5).astype(int)
    for side in cube_sides:
        box = np.zeros_like(liver)
        lo = np.maximum(c - side // 2, 0)
        box[lo[0]:lo[0] + side, lo[1]:lo[1] + side, lo[2]:lo[2] + side] = True
        regions.append(liver & box)
    if erosion:
        regions.append(ndimage.binary_erosion(liver, iterations=erosion))
    return [r for r in regions if r.any()]


def case_features(vol: Volume3D, liver: Mask3D, cfg: PipelineConfig, augment: bool = True):
    """Feature matrices of liver regions and of the non-liver body tissue around them."""
    if not vol.same_geometry(liver):
        raise ShapeError("volume and mask geometries differ")
    if not liver.data.any():
        raise EmptyInputError("empty liver mask")
    ls = cfg.levelset
    window = (ls.window_center, ls.window_width)
    regions = training_regions(liver.data) if augment else [liver.data]
    fm_liver, fm_bg = [], []
    for region in regions:
        lo, hi = bounding_box(region)
        fm_liver.append(feat.build_feature_matrix(vol, Mask3D.like(vol, region), window=window))
        shell = background_shell(vol, region, ls.shell_margin, ls.body_threshold) & ~liver.data
        if shell.any():
            fm_bg.append(feat.build_feature_matrix(vol, Mask3D.like(vol, shell),
                                                   z_extent=(lo[2], hi[2]), window=window))
    return fm_liver, fm_bg


def feature_scaling(Y: np.ndarray):
    """Row offset and scale; scale floors keep near-constant rows from dominating."""
    offset = Y.mean(axis=1)
    scale = np.maximum.reduce([Y.std(axis=1), 0.1 * np.abs(offset), np.full(len(offset), 1e-6)])
    return offset, scale


@dataclass
class TrainingResult:
    models: Models
    logs: dict = field(default_factory=dict)   # label -> (objective_before, objective_after) per iteration


def train(cases: Sequence[Tuple[Volume3D, Mask3D]], cfg: PipelineConfig | None = None,
          augment: bool = True) -> TrainingResult:
    cfg = cfg or PipelineConfig()
    if not cases:
        raise EmptyInputError("no training cases")
    kc = cfg.ksvd
    liver_cols, bg_cols = [], []
    for vol, mask in cases:
        fl, fb = case_features(vol, mask, cfg, augment)
        liver_cols += [f.values for f in fl]
        bg_cols += [f.values for f in fb]
    Y_l, Y_n = np.hstack(liver_cols), np.hstack(bg_cols)
    offset, scale = feature_scaling(np.hstack([Y_l, Y_n]))

    models, logs = {}, {}
    for label, Y, k in (("liver", Y_l, kc.k_c), ("nonliver", Y_n, kc.k_c)):
        res = sparse.ksvd((Y.T - offset).T / scale[:, None], k, kc.t0, kc.iters, seed=kc.seed, label=label)
        d = res.dictionary
        d.offset, d.scale = offset, scale
        d.meta.update({"kind": "feature", "n_cases": len(cases), "features": ",".join(feat.ROW_NAMES)})
        models[label] = d
        logs[label] = (res.objective_before_update, res.objective)

    shape = shapeprior.train_shape_dictionary([m for _, m in cases], kc.k_s, kc.t0, kc.iters, kc.seed)
    models["shape"] = shape.dictionary
    logs["shape"] = (shape.objective_before_update, shape.objective)
    return TrainingResult(Models(models["liver"], models["nonliver"], models["shape"]), logs)
