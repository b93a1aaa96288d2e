"""Global average pooling and region-aware pooling over binary masks.

``region_pool`` computes the per-channel mean of a feature map under one
binary mask (Hadamard product, then sum, then divide); ``reg_gap``
averages the eight per-region vectors with a fixed 1/K weight. Plain
``gap`` is the unmasked mean over all spatial cells.

Numerical contract: with a full (all-ones) mask, ``region_pool`` equals
``gap`` bitwise, and with eight full masks ``reg_gap`` equals ``gap``
bitwise — region vectors are combined by pairwise tree summation so that
summing eight identical vectors is exact.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeMismatch
from .types import (
    CANONICAL_REGIONS,
    Embedding,
    FeatureMap,
    PoolKind,
    RegionId,
    RegionMaskSet,
    validate_feature_map,
)

REGION_NORMS = ("support", "full_grid")
EMPTY_REGION_POLICIES = ("zero", "drop")


@dataclass(frozen=True)
class RegionVector:
    """Mean feature vector of one region plus its pixel support.

    ``region`` is None for the implicit background complement.
    """

    region: RegionId | None
    values: np.ndarray
    support: int


def gap(fmap: FeatureMap, source_backbone: str = "") -> Embedding:
    """Per-channel mean over all spatial cells (plain global average pooling)."""
    validate_feature_map(fmap)
    cells = fmap.height * fmap.width
    values = fmap.data.sum(axis=(0, 1)) / cells
    return Embedding(values, kind=PoolKind.GAP, source_backbone=source_backbone)


def region_pool(
    fmap: FeatureMap,
    mask: np.ndarray,
    region: RegionId | None = None,
    norm: str = "support",
) -> RegionVector:
    """Masked per-channel mean of ``fmap`` under one binary mask.

    ``norm="support"`` divides by the count of mask-1 cells (a true
    masked mean); ``norm="full_grid"`` divides by height*width. An empty
    mask yields a zero vector with support 0 under either norm.
    """
    if norm not in REGION_NORMS:
        raise ValueError(f"norm must be one of {REGION_NORMS}, got {norm!r}")
    mask = np.asarray(mask)
    if mask.shape != (fmap.height, fmap.width):
        raise ShapeMismatch(
            f"mask is {mask.shape}, feature map is {(fmap.height, fmap.width)}"
        )
    support = int(mask.sum())
    if support == 0:
        return RegionVector(region, np.zeros(fmap.channels), 0)
    masked = fmap.data * mask.astype(np.float64)[:, :, None]
    denom = support if norm == "support" else fmap.height * fmap.width
    return RegionVector(region, masked.sum(axis=(0, 1)) / denom, support)


def _pairwise_sum(vectors: list[np.ndarray]) -> np.ndarray:
    """Tree-reduce vectors so equal addends combine without rounding."""
    while len(vectors) > 1:
        nxt = [vectors[i] + vectors[i + 1] for i in range(0, len(vectors) - 1, 2)]
        if len(vectors) % 2:
            nxt.append(vectors[-1])
        vectors = nxt
    return vectors[0]


def reg_gap(
    fmap: FeatureMap,
    masks: RegionMaskSet,
    *,
    region_norm: str = "support",
    include_background: bool = False,
    empty_region_policy: str = "zero",
    source_backbone: str = "",
) -> Embedding:
    """Region-aware global average pooling: mean of per-region means.

    Regions are pooled in canonical order and averaged with weight 1/K.
    K is fixed at 8 (9 with ``include_background``); empty regions
    contribute zero vectors. ``empty_region_policy="drop"`` instead
    divides by the number of non-empty regions.

    Disjointness of the masks is the caller's invariant; only grid shape
    is checked here (pipeline-resized masks may overlap at thresholded
    boundaries, and the test-mode GAP reduction deliberately overlaps).
    """
    if empty_region_policy not in EMPTY_REGION_POLICIES:
        raise ValueError(
            f"empty_region_policy must be one of {EMPTY_REGION_POLICIES}, "
            f"got {empty_region_policy!r}"
        )
    if (masks.height, masks.width) != (fmap.height, fmap.width):
        raise ShapeMismatch(
            f"mask set is {(masks.height, masks.width)}, "
            f"feature map is {(fmap.height, fmap.width)}"
        )
    pooled = [
        region_pool(fmap, masks.masks[region], region, norm=region_norm)
        for region in CANONICAL_REGIONS
    ]
    vectors = [p.values for p in pooled]
    occupied = sum(1 for p in pooled if p.support > 0)
    if include_background:
        stacked = np.stack([np.asarray(masks.masks[r]) for r in CANONICAL_REGIONS])
        background = (stacked.sum(axis=0) == 0).astype(np.uint8)
        bg = region_pool(fmap, background, None, norm=region_norm)
        vectors.append(bg.values)
        occupied += 1 if bg.support > 0 else 0
    if empty_region_policy == "zero":
        k = len(vectors)
    else:
        k = occupied
    if k == 0:
        values = np.zeros(fmap.channels)
    else:
        values = _pairwise_sum(vectors) / k
    return Embedding(values, kind=PoolKind.REG_GAP, source_backbone=source_backbone)
