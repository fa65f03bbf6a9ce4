"""Command-line entry point: ``sparseg train|segment|evaluate|export-slices``.

Exit codes: 0 success, 1 usage or input error, 2 localization failure,
3 divergence of the level set.
"""

from __future__ import annotations

import os
import sys

_THREADS = os.environ.get("SPARSEG_THREADS")
if _THREADS and _THREADS.isdigit() and int(_THREADS) > 0:
    # only effective before the BLAS libraries load, i.e. when run as a script
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(_var, _THREADS)

import logging
from pathlib import Path

import click
import numpy as np

from .config import PipelineConfig
from .errors import DivergenceError, LocalizationError, SparsegError

logger = logging.getLogger("sparseg")

DICTIONARY_FILES = {"liver": "liver.dict", "nonliver": "nonliver.dict", "shape": "shape.dict"}
EXIT_OK, EXIT_INPUT, EXIT_LOCALIZATION, EXIT_DIVERGENCE = 0, 1, 2, 3


class _Group(click.Group):
    """Maps click usage errors and domain exceptions onto the documented exit codes."""

    def main(self, args=None, prog_name=None, complete_var=None, standalone_mode=True, **extra):
        try:
            rv = super().main(args, prog_name, complete_var, standalone_mode=False, **extra)
        except click.exceptions.Abort:
            click.echo("aborted", err=True)
            rv = EXIT_INPUT
        except click.ClickException as exc:
            exc.show()
            rv = EXIT_INPUT
        except LocalizationError as exc:
            click.echo(f"error: localization failed: {exc}", err=True)
            rv = EXIT_LOCALIZATION
        except DivergenceError as exc:
            click.echo(f"error: level set diverged: {exc}", err=True)
            rv = EXIT_DIVERGENCE
        except (SparsegError, ValueError, OSError) as exc:
            click.echo(f"error: {exc}", err=True)
            rv = EXIT_INPUT
        rv = rv if isinstance(rv, int) else EXIT_OK
        if standalone_mode:
            sys.exit(rv)
        return rv


def _check_threads():
    if _THREADS is not None and not (_THREADS.isdigit() and int(_THREADS) > 0):
        raise click.BadParameter(f"SPARSEG_THREADS must be a positive integer, got {_THREADS!r}")


def _load_config(path, lam=None, seed=None, mode=None, flip_lr=None, max_outer=None,
                 inner_steps=None) -> PipelineConfig:
    cfg = PipelineConfig.load(path) if path else PipelineConfig()
    data = cfg.to_dict()
    # flags override the file
    if lam is not None:
        data["lam"] = lam
        data["levelset"]["lam"] = lam
    if seed is not None:
        data["ksvd"]["seed"] = seed
    if mode is not None:
        data["localization"]["mode"] = mode
    if flip_lr:
        data["localization"]["flip_lr"] = True
    if max_outer is not None:
        data["levelset"]["max_outer"] = max_outer
    if inner_steps is not None:
        data["levelset"]["inner_steps"] = inner_steps
    return PipelineConfig.from_dict(data)


@click.group(cls=_Group)
@click.option("-v", "--verbose", is_flag=True, help="Log progress to stderr.")
def cli(verbose):
    """Sparse-representation liver segmentation of CT volumes."""
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    _check_threads()


_config_option = click.option("--config", "config_path", type=click.Path(dir_okay=False),
                              help="JSON configuration; flags override its values.")
_lambda_option = click.option("--lambda", "lam", type=float, help="Regularization weight (default 0.7).")


@cli.command()
@click.argument("pairs", nargs=-1, type=click.Path())
@_config_option
@_lambda_option
@click.option("--seed", type=int, help="K-SVD initialization seed.")
@click.option("--out", "out", type=click.Path(file_okay=False), required=True,
              help="Directory for the dictionaries and training log.")
def train(pairs, config_path, lam, seed, out):
    """Learn the liver, non-liver and shape dictionaries.

    PAIRS alternate volume and liver mask MetaImage headers:
    IMAGE1 MASK1 [IMAGE2 MASK2 ...].
    """
    from .training import train as run_training
    from .volume import load_mask, load_metaimage

    if not pairs:
        raise click.UsageError("no training volumes given")
    if len(pairs) % 2:
        raise click.UsageError("training inputs must come in IMAGE MASK pairs")
    cfg = _load_config(config_path, lam=lam, seed=seed)
    cases = []
    for image, mask in zip(pairs[::2], pairs[1::2]):
        vol, liver = load_metaimage(image), load_mask(mask)
        if not vol.same_geometry(liver):
            raise click.UsageError(f"geometry of {mask} does not match {image}")
        cases.append((vol, liver))
    result = run_training(cases, cfg)

    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    models = {"liver": result.models.d_liver, "nonliver": result.models.d_nonliver,
              "shape": result.models.d_shape}
    for label, d in models.items():
        d.save(out / DICTIONARY_FILES[label])
    lines = ["dictionary,iteration,objective_before_update,objective"]
    for label, (before, after) in result.logs.items():
        lines += [f"{label},{i},{b:.10g},{a:.10g}" for i, (b, a) in enumerate(zip(before, after))]
    (out / "training_log.csv").write_text("\n".join(lines) + "\n")
    (out / "config.json").write_text(cfg.to_json() + "\n")
    click.echo(f"wrote {len(models)} dictionaries to {out}")


def _load_models(directory):
    from .levelset import Models
    from .sparse import Dictionary

    loaded = {}
    for label, name in DICTIONARY_FILES.items():
        path = Path(directory) / name
        if not path.is_file():
            raise click.UsageError(f"missing dictionary file: {path}")
        loaded[label] = Dictionary.load(path)
    return Models(loaded["liver"], loaded["nonliver"], loaded["shape"])


@cli.command()
@click.argument("image", type=click.Path())
@click.option("--dictionaries", "dict_dir", type=click.Path(file_okay=False),
              help="Directory written by `train` (default: config paths.dictionaries or '.').")
@_config_option
@_lambda_option
@click.option("--hu-mode/--gray-mode", "hu_mode", default=None,
              help="Localize with the HU band or the 8-bit gray band.")
@click.option("--flip-lr", is_flag=True, help="Patient right is at high x.")
@click.option("--max-outer", type=click.IntRange(min=1), help="Outer re-weighting iterations.")
@click.option("--inner-steps", type=click.IntRange(min=0), help="Level-set steps per outer iteration.")
@click.option("--out", "out", type=click.Path(dir_okay=False), required=True, help="Output mask (.mhd).")
@click.option("--trace", "trace_path", type=click.Path(dir_okay=False),
              help="Energy trace CSV (default: next to the mask).")
def segment(image, dict_dir, config_path, lam, hu_mode, flip_lr, max_outer, inner_steps, out, trace_path):
    """Localize and segment the liver in IMAGE."""
    from .levelset import run_segmentation
    from .localization import localize
    from .volume import Mask3D, load_metaimage, save_metaimage

    mode = None if hu_mode is None else ("hu" if hu_mode else "gray")
    cfg = _load_config(config_path, lam=lam, mode=mode, flip_lr=flip_lr, max_outer=max_outer,
                       inner_steps=inner_steps)
    models = _load_models(dict_dir or cfg.paths.get("dictionaries", "."))
    vol = load_metaimage(image)
    out = Path(out)
    trace_path = Path(trace_path) if trace_path else out.with_suffix(".trace.csv")

    loc = cfg.localization
    seed = localize(vol, loc.mode, loc.flip_lr, loc.fallback)
    logger.info("seed %s", seed)
    try:
        result = run_segmentation(vol, seed, models, cfg.levelset)
    except DivergenceError as exc:
        steps = exc.trace or []
        lines = ["outer,inner,energy_before,energy,volume"]
        lines += [",".join(str(v) for v in row) for row in steps]
        trace_path.write_text("\n".join(lines) + "\n")
        raise
    save_metaimage(Mask3D.like(vol, result.mask.data), out)
    trace_path.write_text(result.trace_csv())
    click.echo(f"seed {seed}")
    click.echo(f"wrote {out} ({result.mask.count} voxels, converged={result.converged})")


def _parse_vector(text: str):
    try:
        values = [float(v) for v in text.split(",")]
    except ValueError:
        raise click.BadParameter("expected five comma-separated numbers") from None
    if len(values) != 5:
        raise click.BadParameter("expected five comma-separated numbers")
    return values


@cli.command()
@click.argument("result", required=False, type=click.Path())
@click.argument("truth", required=False, type=click.Path())
@click.option("--json", "json_path", type=click.Path(dir_okay=False), help="Also write the report here.")
@click.option("--metrics", "vector", hidden=True,
              help="Score a given VOE,VD,AvgD,RMSD,MaxD vector instead of masks.")
def evaluate(result, truth, json_path, vector):
    """Score RESULT against reference TRUTH (both MetaImage masks)."""
    from .metrics import MetricsReport
    from .metrics import evaluate as run_evaluate
    from .volume import load_mask

    if vector is not None:
        report = MetricsReport.from_values(*_parse_vector(vector))
    else:
        if result is None or truth is None:
            raise click.UsageError("RESULT and TRUTH masks are required")
        h, t = load_mask(result), load_mask(truth)
        if not h.same_geometry(t):
            raise click.UsageError("result and truth geometries differ")
        if not t.data.any():
            raise click.UsageError("truth mask is empty")
        report = run_evaluate(h, t)
    click.echo(report.table())
    click.echo(report.to_json())
    if json_path:
        Path(json_path).write_text(report.to_json() + "\n")


PLANES = {"axial": 2, "coronal": 1, "sagittal": 0}


def slice_image(vol_data, mask_data, plane: str, index: int):
    """RGB image of one slice with the mask boundary drawn in red, and the boundary."""
    from scipy import ndimage

    axis = PLANES[plane]
    gray = np.take(vol_data, index, axis=axis)
    region = np.take(mask_data, index, axis=axis)
    # rows are y for axial, z (superior up) otherwise
    if plane == "axial":
        gray, region = gray.T, region.T
    else:
        gray, region = gray.T[::-1], region.T[::-1]
    interior = ndimage.binary_erosion(region, ndimage.generate_binary_structure(2, 1), border_value=0)
    boundary = region & ~interior
    rgb = np.repeat(gray[:, :, None], 3, axis=2).astype(np.uint8)
    rgb[boundary] = (255, 0, 0)
    return rgb, boundary


@cli.command("export-slices")
@click.argument("image", type=click.Path())
@click.argument("mask", type=click.Path())
@click.option("--plane", type=click.Choice(sorted(PLANES)), default="axial", show_default=True)
@click.option("--out", "out", type=click.Path(file_okay=False), required=True, help="Output directory.")
def export_slices(image, mask, plane, out):
    """Write every slice of IMAGE along PLANE as PNG with the MASK contour."""
    from PIL import Image

    from .volume import load_mask, load_metaimage, window_to_8bit

    vol, m = load_metaimage(image), load_mask(mask)
    if not vol.same_geometry(m):
        raise click.UsageError("volume and mask geometries differ")
    gray = window_to_8bit(vol).data.astype(np.uint8)
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    if not os.access(out, os.W_OK):
        raise click.UsageError(f"output directory is not writable: {out}")
    n = vol.dims[PLANES[plane]]
    width = len(str(n - 1))
    for k in range(n):
        rgb, _ = slice_image(gray, m.data, plane, k)
        Image.fromarray(rgb).save(out / f"{plane}_{k:0{width}d}.png")
    click.echo(f"wrote {n} {plane} slices to {out}")


def main():  # pragma: no cover - console script
    cli()


if __name__ == "__main__":  # pragma: no cover
    main()
