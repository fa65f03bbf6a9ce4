"""Level-set segmentation driven by sparse global and local (shape) residuals.

The level-set field ``phi`` is positive inside the liver. Evolution follows
region competition between a foreground cost ``g`` and a background cost
``1 - g`` plus a curvature (boundary length) term::

    dphi/dt = delta_eps(phi) * (-g + (1 - g) + lam * div(grad phi / |grad phi|))

which is the gradient flow of ::

    E = sum H(phi) g + (1 - H(phi)) (1 - g) + lam (sum |grad H(phi)| + ||alpha||_1)

Lengths are in millimeters throughout; ``epsilon`` is given in voxels and
scaled by the smallest spacing.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
from scipy import ndimage

from . import features as feat
from . import shapeprior, sparse
from .config import LevelSetConfig
from .errors import DivergenceError, EmptyInputError, LocalizationError, ParameterError, ShapeError
from .volume import Mask3D, Volume3D, bounding_box

logger = logging.getLogger(__name__)


def heaviside(phi, epsilon: float):
    """Smoothed step ``(1 + (2/pi) arctan(phi/eps)) / 2``."""
    return 0.5 * (1.0 + (2.0 / np.pi) * np.arctan(np.asarray(phi, dtype=np.float64) / epsilon))


def dirac(phi, epsilon: float):
    """Derivative of :func:`heaviside`."""
    phi = np.asarray(phi, dtype=np.float64)
    return (epsilon / np.pi) / (epsilon * epsilon + phi * phi)


def interior(phi) -> np.ndarray:
    """The sharp-step label: 1 where ``phi >= 0``."""
    return np.asarray(phi) >= 0


@dataclass
class DataTermField:
    g: np.ndarray
    g_complement: np.ndarray

    @classmethod
    def from_g(cls, g) -> "DataTermField":
        g = np.asarray(g, dtype=np.float64)
        if not np.all(np.isfinite(g)):
            raise FloatingPointError("data term has non-finite values")
        if g.size and (g.min() < 0.0 or g.max() > 1.0):
            raise ValueError("data term must lie in [0, 1]")
        return cls(g, 1.0 - g)


def build_data_term(global_field, shape_field) -> DataTermField:
    """Pointwise product of two normalized residual fields, and its complement."""
    a = np.asarray(global_field, dtype=np.float64)
    b = np.asarray(shape_field, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"residual fields differ in shape: {a.shape} vs {b.shape}")
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
        raise FloatingPointError("residual fields must be finite")
    return DataTermField.from_g(np.clip(a * b, 0.0, 1.0))


# --------------------------------------------------------------------------
# Global (region feature) residuals


@dataclass
class GlobalResidual:
    liver: np.ndarray          # per column squared residual, liver dictionary
    nonliver: np.ndarray       # per column squared residual, non-liver dictionary
    liver_norm: np.ndarray
    nonliver_norm: np.ndarray
    liver_recon: np.ndarray    # reconstructed raw feature columns
    nonliver_recon: np.ndarray
    z_extent: tuple = (0, 0)

    def backproject(self, values: np.ndarray, shape) -> np.ndarray:
        return backproject(values, self.z_extent, shape)


def normalize_max(values) -> np.ndarray:
    values = np.asarray(values, dtype=np.float64)
    top = float(values.max()) if values.size else 0.0
    return values / top if top > 0 else np.zeros_like(values)


def _code(d: sparse.Dictionary, raw: np.ndarray, t0: int):
    x = d.transform(raw)
    A = sparse.omp_batch(d, x, t0)
    fit = d.atoms @ A
    res = np.sum((x - fit) ** 2, axis=0)
    # round-off of an exactly representable column is not a residual
    res[res <= 1e-20 * np.maximum(np.sum(x * x, axis=0), 1.0)] = 0.0
    return res, d.inverse_transform(fit)


def global_residual(fm: feat.FeatureMatrix, d_liver: sparse.Dictionary, d_nonliver: sparse.Dictionary,
                    t0: int = 5) -> GlobalResidual:
    """Squared OMP residual of every feature column against both dictionaries.

    Residuals are measured in each dictionary's normalized feature space and
    scaled to [0, 1] by their maximum over the volume.
    """
    values = fm.values if isinstance(fm, feat.FeatureMatrix) else np.asarray(fm)
    for d in (d_liver, d_nonliver):
        if d.rows != values.shape[0]:
            raise ShapeError(f"dictionary has {d.rows} rows, features have {values.shape[0]}")
    r_l, rec_l = _code(d_liver, values, t0)
    r_n, rec_n = _code(d_nonliver, values, t0)
    z_extent = getattr(fm, "z_extent", (0, values.shape[1]))
    return GlobalResidual(r_l, r_n, normalize_max(r_l), normalize_max(r_n), rec_l, rec_n, z_extent)


def backproject(column_values, z_extent, shape) -> np.ndarray:
    """Voxel field where each voxel takes the value of its axial slab's column."""
    column_values = np.asarray(column_values, dtype=np.float64)
    cols = feat.slice_to_column(np.arange(shape[2]), z_extent[0], z_extent[1], column_values.size)
    return np.broadcast_to(column_values[cols][None, None, :], shape).copy()


def background_shell(vol: Volume3D, region: np.ndarray, margin: int = 5,
                     body_threshold: float = -500.0) -> np.ndarray:
    """Body voxels within ``margin`` voxels of ``region`` but outside it."""
    grown = ndimage.binary_dilation(region, ndimage.generate_binary_structure(3, 1), iterations=margin)
    shell = grown & ~region & (vol.data > body_threshold)
    if not shell.any():
        shell = ~region & (vol.data > body_threshold)
    return shell


# --------------------------------------------------------------------------
# Geometry


def _derivative(f, h, axis):
    # axes too short for differences carry no variation
    if f.shape[axis] < 2:
        return np.zeros_like(f)
    return np.gradient(f, h, axis=axis)


def _gradient(phi, spacing):
    return [_derivative(phi, spacing[ax], ax) for ax in range(phi.ndim)]


def curvature(phi, spacing=(1.0, 1.0, 1.0), tiny: float = 1e-12) -> np.ndarray:
    """Mean curvature ``div(grad phi / |grad phi|)`` by central differences."""
    grads = _gradient(phi, spacing)
    norm = np.sqrt(sum(g * g for g in grads)) + tiny
    return sum(_derivative(g / norm, spacing[ax], ax) for ax, g in enumerate(grads))


def perimeter(phi, epsilon: float, spacing=(1.0, 1.0, 1.0)) -> float:
    """Discrete boundary measure ``sum |grad H(phi)| dV`` (mm^2)."""
    grads = _gradient(heaviside(phi, epsilon), spacing)
    return float(np.sum(np.sqrt(sum(g * g for g in grads))) * np.prod(spacing))


@dataclass
class LevelSetState:
    phi: np.ndarray
    spacing: tuple = (1.0, 1.0, 1.0)
    epsilon: float = 1.5
    lam: float = 0.7
    iteration: int = 0
    energy_trace: list = field(default_factory=list)
    l1_penalty: float = 0.0

    def __post_init__(self):
        self.phi = np.asarray(self.phi, dtype=np.float64)
        if not np.all(np.isfinite(self.phi)):
            raise FloatingPointError("phi must be finite")

    @property
    def eps_mm(self) -> float:
        return self.epsilon * min(self.spacing)

    def mask(self) -> np.ndarray:
        return interior(self.phi)


def energy(state: LevelSetState, data: DataTermField) -> float:
    """Discretized total energy of ``state`` under ``data`` (voxel volume weighted)."""
    h = heaviside(state.phi, state.eps_mm)
    dv = float(np.prod(state.spacing))
    region = float(np.sum(h * data.g + (1.0 - h) * data.g_complement)) * dv
    return region + state.lam * (perimeter(state.phi, state.eps_mm, state.spacing) + state.l1_penalty)


def max_stable_dt(spacing, lam: float) -> float:
    return np.inf if lam <= 0 else 0.5 * min(spacing) ** 2 / lam


def default_dt(spacing, lam: float, data: Optional[DataTermField] = None) -> float:
    force = 1.0 if data is None else float(np.max(np.abs(data.g_complement - data.g)))
    return 0.4 * min(spacing) ** 2 / max(lam, force, 1e-12)


def evolve_step(state: LevelSetState, data: DataTermField, dt: float) -> LevelSetState:
    """One explicit gradient-descent update; returns a new state."""
    if dt <= 0 or dt > max_stable_dt(state.spacing, state.lam):
        raise ParameterError(f"dt={dt} violates the stability bound "
                             f"{max_stable_dt(state.spacing, state.lam):.4g}")
    if data.g.shape != state.phi.shape:
        raise ShapeError("data term and phi differ in shape")
    force = data.g_complement - data.g
    if state.lam != 0:
        force = force + state.lam * curvature(state.phi, state.spacing)
    phi = state.phi + dt * dirac(state.phi, state.eps_mm) * force
    new = replace(state, phi=phi, iteration=state.iteration + 1, energy_trace=list(state.energy_trace))
    new.energy_trace.append(energy(new, data))
    return new


def signed_distance(inside: np.ndarray, spacing) -> np.ndarray:
    """Exact Euclidean signed distance, positive inside.

    Voxel centers sit half a (smallest) spacing from the interface, so the
    distance to the nearest opposite voxel is reduced by that amount.
    """
    inside = np.asarray(inside, dtype=bool)
    if not inside.any():
        raise EmptyInputError("level set has an empty interior")
    half = 0.5 * min(spacing)
    if inside.all():
        return np.full(inside.shape, half)
    d_in = ndimage.distance_transform_edt(inside, sampling=spacing)
    d_out = ndimage.distance_transform_edt(~inside, sampling=spacing)
    return np.where(inside, d_in - half, -(d_out - half))


def reinitialize(state: LevelSetState) -> LevelSetState:
    try:
        phi = signed_distance(state.mask(), state.spacing)
    except EmptyInputError as exc:
        raise DivergenceError("interior vanished", trace=list(state.energy_trace)) from exc
    return replace(state, phi=phi, energy_trace=list(state.energy_trace))


# --------------------------------------------------------------------------
# Data term assembly


@dataclass
class Models:
    d_liver: sparse.Dictionary
    d_nonliver: sparse.Dictionary
    d_shape: sparse.Dictionary


@dataclass
class OuterRecord:
    iteration: int
    volume: int
    global_residual: np.ndarray
    shape_residual: np.ndarray
    e_shape: float
    shape_nnz: float


def _ir_weights(prev) -> Optional[np.ndarray]:
    """Mean-one column weights from the previous iteration's residuals."""
    if prev is None:
        return None
    w = np.asarray(prev, dtype=np.float64) + 1e-6
    return w / w.mean()


def _region_level(observed, recon, residual):
    """Per-slab region intensity: the sparse reconstruction, trusted by how well it fits.

    ``beta = 1 / (1 + residual / rows)`` blends the reconstructed mean HU with
    the observed one, so a column the dictionary cannot represent falls back
    to its own measurement.
    """
    beta = 1.0 / (1.0 + residual / observed.shape[0])
    return beta * recon[feat.HU_ROW] + (1.0 - beta) * observed[feat.HU_ROW]


def voxel_global_field(vol: Volume3D, region: np.ndarray, models: Models, cfg: LevelSetConfig,
                       weights=None):
    """Per-voxel foreground cost in [0, 1] from the sparse-coded region models.

    The interior columns are coded against the liver dictionary and the
    background shell columns against the non-liver dictionary. Each slab's
    reconstructed mean intensity (see :func:`_region_level`) acts as the
    region constant; a voxel's cost
    compares its squared deviation from the two constants, each scaled by one
    plus the slab's normalized coding residual.
    """
    window = (cfg.window_center, cfg.window_width)
    lo, hi = bounding_box(region)
    z_extent = (lo[2], hi[2])
    fm = feat.build_feature_matrix(vol, Mask3D.like(vol, region), window=window)
    shell = background_shell(vol, region, cfg.shell_margin, cfg.body_threshold)
    fb = feat.build_feature_matrix(vol, Mask3D.like(vol, shell), z_extent=z_extent, window=window)

    res_in, rec_in = _code(models.d_liver, fm.values, cfg.t0)
    res_out, rec_out = _code(models.d_nonliver, fb.values, cfg.t0)
    level_in = _region_level(fm.values, rec_in, res_in)
    level_out = _region_level(fb.values, rec_out, res_out)
    if weights is not None:
        res_in = res_in * weights
        res_out = res_out * weights
    w_in = 1.0 + normalize_max(res_in)
    w_out = 1.0 + normalize_max(res_out)

    shape = vol.dims
    smooth = ndimage.gaussian_filter(vol.data, cfg.smoothing_sigma) if cfg.smoothing_sigma > 0 else vol.data
    c_in = backproject(level_in, z_extent, shape)
    c_out = backproject(level_out, z_extent, shape)
    e_in = backproject(w_in, z_extent, shape) * (smooth - c_in) ** 2
    e_out = backproject(w_out, z_extent, shape) * (smooth - c_out) ** 2
    total = e_in + e_out
    g = np.where(total > 0, e_in / np.where(total > 0, total, 1.0), 0.5)
    return np.clip(g, 0.0, 1.0), res_in


def voxel_shape_field(region: np.ndarray, d_shape: sparse.Dictionary, lam: float, max_iter: int,
                      weights=None, level: float = 0.85):
    """Per-voxel shape residual in {0, 1} and the sparse shape fit.

    The interior's patch matrix is coded against the shape dictionary; the
    field is the squared residual between the binarized reconstructed shape
    and the liver label, i.e. 0 where the learned shape says liver and 1
    elsewhere (including outside the interior's bounding box).
    """
    box = bounding_box(region)
    v_t = shapeprior.extract_patch_matrix(region, box)
    fit = shapeprior.shape_energy(v_t, d_shape, lam, max_iter=max_iter, weights=weights)
    recon = shapeprior.reconstruct_shape(d_shape, fit.alpha)
    occupancy = shapeprior.patch_to_volume(recon, box, region.shape)
    field = (1.0 - (occupancy >= level)) ** 2
    return field.astype(np.float64), fit


# --------------------------------------------------------------------------
# Driver


@dataclass
class SegmentationResult:
    mask: Mask3D
    state: LevelSetState
    steps: list = field(default_factory=list)      # (outer, inner, energy_before, energy_after, volume)
    outer: list = field(default_factory=list)
    lam: float = 0.7
    converged: bool = False

    def trace_csv(self) -> str:
        lines = ["outer,inner,energy_before,energy,volume"]
        lines += [f"{o},{i},{eb:.10g},{ea:.10g},{v}" for o, i, eb, ea, v in self.steps]
        return "\n".join(lines) + "\n"

    def descent_fraction(self) -> float:
        """Share of inner steps whose energy did not increase."""
        if not self.steps:
            return 1.0
        ok = sum(1 for _, _, eb, ea, _ in self.steps if ea <= eb + 1e-9 * max(1.0, abs(eb)))
        return ok / len(self.steps)


def run_segmentation(vol: Volume3D, seed, models: Models, cfg: Optional[LevelSetConfig] = None,
                     observer=None) -> SegmentationResult:
    """Iteratively re-weighted level-set segmentation from a seed region.

    Each outer iteration recodes the current interior's feature and patch
    matrices (columns weighted by the previous iteration's residuals), builds
    the data term, and runs ``inner_steps`` descent steps with periodic
    reinitialization. Stops after two consecutive outer iterations changing
    the interior volume by less than ``volume_tol`` or after ``max_outer``.
    """
    cfg = cfg or LevelSetConfig()
    seed_mask = seed.mask(vol.dims) if hasattr(seed, "mask") else np.asarray(seed, dtype=bool)
    if not seed_mask.any():
        raise LocalizationError("empty seed region")
    spacing = vol.spacing
    state = LevelSetState(signed_distance(seed_mask, spacing), spacing, cfg.epsilon, cfg.lam)
    result = SegmentationResult(Mask3D.like(vol, seed_mask), state, lam=cfg.lam)

    w_global = w_shape = None
    quiet = 0
    volume = int(seed_mask.sum())
    for outer in range(cfg.max_outer):
        region = state.mask()
        if not region.any():
            raise DivergenceError("interior vanished", trace=result.steps)
        if cfg.inner_steps == 0:
            continue
        g_field, res_global = voxel_global_field(vol, region, models, cfg, w_global)
        s_field, fit = voxel_shape_field(region, models.d_shape, cfg.lam, cfg.l1_max_iter, w_shape,
                                              cfg.shape_level)
        data = build_data_term(g_field, s_field)
        w_global, w_shape = _ir_weights(res_global), _ir_weights(fit.column_residual)
        state = replace(state, l1_penalty=float(np.sum(np.abs(fit.alpha))))

        dt = cfg.dt if cfg.dt is not None else default_dt(spacing, cfg.lam, data)
        before = energy(state, data)
        for inner in range(cfg.inner_steps):
            state = evolve_step(state, data, dt)
            after = state.energy_trace[-1]
            n_in = int(np.count_nonzero(state.phi >= 0))
            result.steps.append((outer, inner, before, after, n_in))
            if n_in == 0:
                raise DivergenceError("interior vanished", trace=result.steps)
            if (inner + 1) % cfg.reinit_every == 0:
                state = reinitialize(state)
                after = energy(state, data)
            before = after
        state = reinitialize(state)

        new_volume = int(np.count_nonzero(state.phi >= 0))
        change = abs(new_volume - volume) / max(volume, 1)
        result.outer.append(OuterRecord(outer, new_volume, res_global, fit.column_residual,
                                        fit.e_shape, float(fit.nnz_per_column.mean())))
        logger.info("outer %d: volume %d (change %.4f), e_shape %.4g", outer, new_volume, change, fit.e_shape)
        if observer is not None:
            observer(outer, state.phi.copy())
        volume = new_volume
        quiet = quiet + 1 if change < cfg.volume_tol else 0
        if quiet >= 2:
            result.converged = True
            break

    result.state = state
    result.mask = Mask3D.like(vol, state.mask())
    return result
