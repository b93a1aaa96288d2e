"""Pipeline configuration.

Mirrors a flat JSON config document; every key is overridable by a
same-named CLI flag, and flags win.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Optional

from .backbones import BACKBONE_NAMES
from .pooling import EMPTY_REGION_POLICIES, REGION_NORMS

POOLING_KINDS = ("gap", "reg_gap")

#: HeadConfig keys settable through the pipeline config (input_dim is
#: derived from the embedding cache at train time).
HEAD_KEYS = (
    "hidden1", "hidden2", "dropout_rate", "max_norm", "learning_rate",
    "beta1", "beta2", "epsilon", "decay", "batch_size", "epochs",
)


@dataclass(frozen=True)
class PipelineConfig:
    """Every knob of the pipeline stages."""

    backbone: str = "identity"
    backbone_model: Optional[str] = None
    parser_model: Optional[str] = None
    detector_model: Optional[str] = None
    pooling: str = "reg_gap"
    region_norm: str = "support"
    include_background: bool = False
    empty_region_policy: str = "zero"
    mask_threshold: float = 0.5
    head: dict = field(default_factory=dict)
    cache_dir: str = "cache"
    seed: int = 0

    def __post_init__(self):
        if self.backbone not in BACKBONE_NAMES:
            raise ValueError(
                f"backbone must be one of {BACKBONE_NAMES}, got {self.backbone!r}"
            )
        if self.pooling not in POOLING_KINDS:
            raise ValueError(
                f"pooling must be one of {POOLING_KINDS}, got {self.pooling!r}"
            )
        if self.region_norm not in REGION_NORMS:
            raise ValueError(
                f"region_norm must be one of {REGION_NORMS}, got {self.region_norm!r}"
            )
        if self.empty_region_policy not in EMPTY_REGION_POLICIES:
            raise ValueError(
                f"empty_region_policy must be one of {EMPTY_REGION_POLICIES}"
            )
        unknown = set(self.head) - set(HEAD_KEYS)
        if unknown:
            raise ValueError(f"unknown head keys {sorted(unknown)}")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")


def load_pipeline_config(
    path: Optional[str | Path] = None, overrides: Optional[dict] = None
) -> PipelineConfig:
    """Read the JSON config (if any) and apply CLI overrides on top."""
    values: dict = {}
    if path is not None:
        document = json.loads(Path(path).read_text())
        if not isinstance(document, dict):
            raise ValueError(f"config {path} must be a JSON object")
        known = {f.name for f in fields(PipelineConfig)}
        unknown = set(document) - known
        if unknown:
            raise ValueError(f"unknown config keys {sorted(unknown)} in {path}")
        values.update(document)
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        if key in HEAD_KEYS:
            values.setdefault("head", {})
            values["head"] = {**values["head"], key: value}
        else:
            values[key] = value
    return PipelineConfig(**values)
