"""Shared domain types: feature maps, region masks, label maps, embeddings.

All types are immutable values after construction and safe to share
across threads. Validation that costs O(pixels) lives in the explicit
``validate_*`` operations so hot paths can opt in at boundaries.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum, IntEnum
from typing import Optional

import numpy as np

from .errors import (
    EmptyDimension,
    NonBinaryMask,
    NonFiniteValue,
    OverlappingRegions,
    ShapeMismatch,
)


class RegionId(IntEnum):
    """The eight canonical face regions, ordered by fixed canonical index.

    The index is stable across runs and serialization; label-map PNGs
    store ``value + 1`` (0 is reserved for background).
    """

    EAR = 0
    EYES = 1
    EYEBROW = 2
    HAIR = 3
    LIPS = 4
    NECK = 5
    NOSE = 6
    SKIN = 7


#: Canonical iteration order for every per-region reduction.
CANONICAL_REGIONS: tuple[RegionId, ...] = tuple(RegionId)

#: Label value used for background in canonical label maps.
BACKGROUND_LABEL = 0

_NAME_TO_REGION = {r.name.lower(): r for r in RegionId}


def region_from_name(name: str) -> Optional[RegionId]:
    """Map a lowercase region name to its RegionId; 'background' -> None."""
    key = name.strip().lower()
    if key == "background":
        return None
    if key not in _NAME_TO_REGION:
        raise KeyError(f"unknown region name {name!r}")
    return _NAME_TO_REGION[key]


def canonical_palette() -> dict[int, Optional[RegionId]]:
    """Palette of a canonical label map: 0 background, 1..8 regions."""
    palette: dict[int, Optional[RegionId]] = {BACKGROUND_LABEL: None}
    for region in CANONICAL_REGIONS:
        palette[int(region) + 1] = region
    return palette


class PoolKind(str, Enum):
    """Which pooling produced an embedding."""

    GAP = "gap"
    REG_GAP = "reg_gap"


@dataclass(frozen=True)
class FeatureMap:
    """Rank-3 (height x width x channels) activations from a backbone."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float64)
        if arr.ndim != 3:
            raise ValueError(f"feature map must be rank-3, got ndim={arr.ndim}")
        object.__setattr__(self, "data", arr)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]


@dataclass(frozen=True)
class LabelMap:
    """Rank-2 integer label image plus the palette that interprets it.

    ``palette`` maps every label value that may appear to a RegionId or
    to None for background.
    """

    labels: np.ndarray
    palette: dict[int, Optional[RegionId]]

    def __post_init__(self):
        arr = np.asarray(self.labels)
        if arr.ndim != 2:
            raise ValueError(f"label map must be rank-2, got ndim={arr.ndim}")
        if not np.issubdtype(arr.dtype, np.integer):
            raise ValueError(f"label map must be integer, got dtype={arr.dtype}")
        object.__setattr__(self, "labels", arr)

    @property
    def height(self) -> int:
        return self.labels.shape[0]

    @property
    def width(self) -> int:
        return self.labels.shape[1]


@dataclass(frozen=True)
class RegionMaskSet:
    """One binary mask per canonical region on a common grid.

    Masks are expected to be per-pixel disjoint (background = all zero);
    ``validate_mask_set`` enforces this.
    """

    masks: dict[RegionId, np.ndarray]

    def __post_init__(self):
        missing = [r.name for r in CANONICAL_REGIONS if r not in self.masks]
        if missing:
            raise ValueError(f"mask set missing regions: {missing}")
        extra = [k for k in self.masks if not isinstance(k, RegionId)]
        if extra:
            raise ValueError(f"mask set has non-region keys: {extra}")

    @property
    def height(self) -> int:
        return self.masks[RegionId.EAR].shape[0]

    @property
    def width(self) -> int:
        return self.masks[RegionId.EAR].shape[1]


@dataclass(frozen=True)
class Embedding:
    """Pooled length-C feature vector, the regression head's input."""

    values: np.ndarray
    kind: PoolKind
    source_backbone: str = ""

    def __post_init__(self):
        arr = np.asarray(self.values, dtype=np.float64)
        if arr.ndim != 1:
            raise ValueError(f"embedding must be a vector, got ndim={arr.ndim}")
        if not np.all(np.isfinite(arr)):
            raise NonFiniteValue("embedding contains NaN/Inf")
        object.__setattr__(self, "values", arr)

    @property
    def channels(self) -> int:
        return self.values.shape[0]


@dataclass(frozen=True)
class BmiRecord:
    """One dataset row: image reference, ground-truth BMI, optional tags."""

    id: str
    image_ref: str
    bmi: float
    gender: Optional[str] = None
    identity: Optional[str] = None
    split: Optional[str] = None

    def __post_init__(self):
        if not self.id:
            raise ValueError("record id must be non-empty")
        if not np.isfinite(self.bmi) or not (10.0 < self.bmi < 100.0):
            raise ValueError(
                f"bmi {self.bmi!r} outside plausible range (10, 100)"
            )
        if self.gender not in (None, "male", "female"):
            raise ValueError(f"gender must be male/female, got {self.gender!r}")
        if self.split not in (None, "train", "test"):
            raise ValueError(f"split must be train/test, got {self.split!r}")


def validate_feature_map(fmap: FeatureMap) -> FeatureMap:
    """Return ``fmap`` unchanged if all invariants hold.

    Raises:
        EmptyDimension: any dimension is zero.
        NonFiniteValue: NaN or Inf present.
    """
    if min(fmap.data.shape) < 1:
        raise EmptyDimension(f"feature map has empty dimension: {fmap.data.shape}")
    if not np.all(np.isfinite(fmap.data)):
        raise NonFiniteValue("feature map contains NaN/Inf")
    return fmap


def validate_mask_set(masks: RegionMaskSet) -> RegionMaskSet:
    """Return ``masks`` unchanged if binary, shape-consistent and disjoint.

    Raises:
        NonBinaryMask: an entry is neither 0 nor 1.
        ShapeMismatch: masks differ in height x width.
        OverlappingRegions: two masks are 1 at the same pixel.
    """
    shape = None
    total = None
    for region in CANONICAL_REGIONS:
        mask = np.asarray(masks.masks[region])
        if mask.ndim != 2:
            raise ShapeMismatch(f"{region.name} mask is not rank-2")
        if shape is None:
            shape = mask.shape
            total = np.zeros(shape, dtype=np.int64)
        elif mask.shape != shape:
            raise ShapeMismatch(
                f"{region.name} mask is {mask.shape}, expected {shape}"
            )
        values = np.unique(mask)
        if not np.all(np.isin(values, (0, 1))):
            raise NonBinaryMask(
                f"{region.name} mask has non-binary values {values[:5]}"
            )
        total += mask.astype(np.int64)
    if total is not None and total.max(initial=0) > 1:
        where = np.argwhere(total > 1)[0]
        raise OverlappingRegions(
            f"pixel {tuple(int(v) for v in where)} claimed by multiple regions"
        )
    return masks
