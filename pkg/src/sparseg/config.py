"""Pipeline configuration with JSON round-tripping."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .errors import ParameterError

DEFAULT_LAMBDA = 0.7


@dataclass
class KsvdConfig:
    k_c: int = 64
    k_s: int = 128
    t0: int = 5
    iters: int = 30
    seed: int = 0


@dataclass
class LevelSetConfig:
    lam: float = DEFAULT_LAMBDA
    epsilon: float = 1.5          # Heaviside width, voxels
    dt: float | None = None       # None: 0.4 min(spacing)^2 / max(lam, force range)
    inner_steps: int = 40
    reinit_every: int = 10
    max_outer: int = 15
    volume_tol: float = 1e-3      # relative interior change that counts as converged
    t0: int = 5
    shell_margin: int = 5         # voxels of background around the interior
    smoothing_sigma: float = 0.5  # voxels, for the intensity used by the voxel force
    body_threshold: float = -500.0
    window_center: float = 50.0
    window_width: float = 350.0
    l1_max_iter: int = 300
    shape_level: float = 0.85     # reconstructed occupancy counted as shape interior


@dataclass
class LocalizationConfig:
    mode: str = "hu"
    flip_lr: bool = False
    fallback: bool = False


@dataclass
class PipelineConfig:
    lam: float = DEFAULT_LAMBDA
    ksvd: KsvdConfig = field(default_factory=KsvdConfig)
    levelset: LevelSetConfig = field(default_factory=LevelSetConfig)
    localization: LocalizationConfig = field(default_factory=LocalizationConfig)
    paths: dict = field(default_factory=dict)

    def __post_init__(self):
        self.levelset.lam = self.lam
        self.validate()

    def validate(self) -> None:
        ls, kc = self.levelset, self.ksvd
        checks = [
            (self.lam > 0, "lambda must be positive"),
            (ls.epsilon > 0, "epsilon must be positive"),
            (0 < ls.shape_level <= 1, "shape_level must be in (0, 1]"),
            (ls.dt is None or ls.dt > 0, "dt must be positive"),
            (ls.inner_steps >= 0, "inner_steps must be >= 0"),
            (ls.reinit_every >= 1, "reinit_every must be >= 1"),
            (ls.max_outer >= 1, "max_outer must be >= 1"),
            (ls.t0 >= 1 and kc.t0 >= 1, "t0 must be >= 1"),
            (kc.k_c >= 1 and kc.k_s >= 1, "atom counts must be >= 1"),
            (kc.iters >= 1, "ksvd iters must be >= 1"),
            (self.localization.mode in ("hu", "gray"), "localization mode must be hu or gray"),
        ]
        for ok, message in checks:
            if not ok:
                raise ParameterError(message)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, data: dict) -> "PipelineConfig":
        data = dict(data)
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ParameterError(f"unknown config keys: {sorted(unknown)}")
        sections = {"ksvd": KsvdConfig, "levelset": LevelSetConfig, "localization": LocalizationConfig}
        kwargs = {}
        for key, value in data.items():
            if key in sections:
                sub = sections[key]
                bad = set(value) - {f.name for f in fields(sub)}
                if bad:
                    raise ParameterError(f"unknown {key} keys: {sorted(bad)}")
                kwargs[key] = sub(**value)
            else:
                kwargs[key] = value
        if "lam" not in kwargs and "levelset" in kwargs:
            kwargs["lam"] = kwargs["levelset"].lam
        return cls(**kwargs)

    @classmethod
    def from_json(cls, text: str) -> "PipelineConfig":
        return cls.from_dict(json.loads(text))

    @classmethod
    def load(cls, path) -> "PipelineConfig":
        return cls.from_json(Path(path).read_text())
