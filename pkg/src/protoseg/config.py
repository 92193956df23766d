"""Run and model configuration."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

DEFAULT_SEED = 20240607


@dataclass
class ModelConfig:
    in_channels: int = 3
    n_prototypes: int = 128  # M
    feature_dim: int = 64  # F
    n_samples: int = 64  # K
    sampling: str = "fps_features"
    point_widths: tuple[int, ...] = (64, 64)
    proto_hidden: int = 128
    dilations: tuple[int, ...] = (1, 2, 4, 8)
    k: int = 16
    kernel_hidden: int = 16
    branch_width: int = 32
    fusion_width: int = 128
    # relative neighbour offsets are multiplied by this before the kernel MLP
    offset_scale: float = 10.0
    threshold: float = 0.3
    nms_iou: float = 0.5

    def __post_init__(self):
        self.point_widths = tuple(self.point_widths)
        self.dilations = tuple(self.dilations)
        if self.sampling not in ("fps_features", "fps_coords"):
            raise ValueError(f"unknown sampling {self.sampling!r}")
        d = self.dilations
        if not d or d[0] != 1 or any(b <= a for a, b in zip(d, d[1:])):
            raise ValueError(f"dilations must start at 1 and increase strictly, got {d}")
        if not 0.0 < self.threshold < 1.0:
            raise ValueError("threshold must lie in (0, 1)")

    @property
    def k_base(self) -> int:
        return self.k * max(self.dilations)


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    lam: float = 1.0
    use_spatial_matching: bool = True
    use_gt_to_pr: bool = True
    lr: float = 1e-3
    batch: int = 16
    epochs: int = 30
    seed: int = DEFAULT_SEED
    attach_orphans: bool = False

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        d = dict(d)
        model = ModelConfig(**d.pop("model", {}))
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys {sorted(unknown)}")
        return cls(model=model, **d)

    def merged(self, overrides: dict) -> "RunConfig":
        base = self.to_dict()
        for key, value in overrides.items():
            if key == "model":
                base["model"].update(value)
            else:
                base[key] = value
        return RunConfig.from_dict(base)

    @classmethod
    def from_json(cls, path: str | Path) -> "RunConfig":
        return cls().merged(json.loads(Path(path).read_text()))
