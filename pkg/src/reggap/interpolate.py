"""Bi-quartic resampling: separable degree-4 Lagrange interpolation.

Each output sample is a 1-D Lagrange interpolation over the 5 source
samples nearest the continuous target coordinate, applied per axis
(rows, then columns) and independently per channel.

Conventions (these are choices, stated once here):

* Coordinate mapping is align-corners: target index ``t`` maps to source
  position ``t * (S - 1) / (T - 1)``; a single-sample target reads the
  source center. Endpoints are preserved exactly.
* The 5-sample stencil is centered on the rounded coordinate, rounding
  half toward the lower index, and clamped so it always lies inside the
  source grid (edge stencils shift inward rather than read out of
  bounds). Sources with fewer than 5 samples per axis use all samples.
* Resizing to the source dimensions is the exact identity.

Weight matrices are cached per (source, target) length, so repeated
resizes of equally-shaped maps cost two small matrix products.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import EmptyDimension, NonBinaryMask
from .types import FeatureMap, validate_feature_map

#: Samples per axis in the full interpolation stencil (degree 4).
STENCIL = 5

RESIZE_KINDS = ("biquartic", "nearest")


@dataclass(frozen=True)
class ResizeSpec:
    """Target grid and resampling kind."""

    target_height: int
    target_width: int
    kind: str = "biquartic"

    def __post_init__(self):
        if self.target_height < 1 or self.target_width < 1:
            raise ValueError(
                f"target dims must be >= 1, got "
                f"{self.target_height}x{self.target_width}"
            )
        if self.kind not in RESIZE_KINDS:
            raise ValueError(f"kind must be one of {RESIZE_KINDS}, got {self.kind!r}")


def _source_coord(t: int, target: int, source: int) -> float:
    if target == 1:
        return (source - 1) / 2.0
    return t * (source - 1) / (target - 1)


def _stencil_start(x: float, source: int, width: int) -> int:
    if source <= width:
        return 0
    # round half toward the lower index, then center the stencil
    center = math.ceil(x - 0.5)
    return min(max(center - width // 2, 0), source - width)


@lru_cache(maxsize=256)
def _lagrange_matrix(source: int, target: int) -> np.ndarray:
    """(target x source) interpolation weights, <= STENCIL nonzeros per row."""
    width = min(source, STENCIL)
    matrix = np.zeros((target, source), dtype=np.float64)
    for t in range(target):
        x = _source_coord(t, target, source)
        start = _stencil_start(x, source, width)
        nodes = range(start, start + width)
        for j in nodes:
            weight = 1.0
            for m in nodes:
                if m != j:
                    weight *= (x - m) / (j - m)
            matrix[t, j] = weight
    return matrix


@lru_cache(maxsize=256)
def _nearest_indices(source: int, target: int) -> np.ndarray:
    idx = np.empty(target, dtype=np.intp)
    for t in range(target):
        x = _source_coord(t, target, source)
        idx[t] = min(max(math.ceil(x - 0.5), 0), source - 1)
    return idx


def resize_array(data: np.ndarray, target_height: int, target_width: int) -> np.ndarray:
    """Bi-quartic resize of an (H, W) or (H, W, C) float array."""
    if data.ndim not in (2, 3):
        raise ValueError(f"expected rank-2 or rank-3 array, got ndim={data.ndim}")
    if min(data.shape[:2]) < 1 or (data.ndim == 3 and data.shape[2] < 1):
        raise EmptyDimension(f"cannot resize array of shape {data.shape}")
    rows = _lagrange_matrix(data.shape[0], target_height)
    cols_t = _lagrange_matrix(data.shape[1], target_width).T
    data = np.asarray(data, dtype=np.float64)
    if data.ndim == 2:
        return rows @ data @ cols_t
    # one matrix product pair per channel: bitwise identical to resizing
    # each channel on its own, whatever the channel count
    out = np.empty((target_height, target_width, data.shape[2]))
    for c in range(data.shape[2]):
        out[:, :, c] = rows @ np.ascontiguousarray(data[:, :, c]) @ cols_t
    return out


def resize_biquartic(fmap: FeatureMap, spec: ResizeSpec) -> FeatureMap:
    """Resample a feature map onto ``spec``'s grid, channels independent.

    Reproduces separable polynomials of per-axis degree <= 4 exactly
    (up to roundoff) whenever the source has >= 5 samples per axis.
    """
    if spec.kind != "biquartic":
        raise ValueError(f"resize_biquartic requires kind 'biquartic', got {spec.kind!r}")
    validate_feature_map(fmap)
    out = resize_array(fmap.data, spec.target_height, spec.target_width)
    return FeatureMap(out)


def resize_nearest(fmap: FeatureMap, spec: ResizeSpec) -> FeatureMap:
    """Nearest-sample resize; debugging aid for masks only."""
    validate_feature_map(fmap)
    rows = _nearest_indices(fmap.height, spec.target_height)
    cols = _nearest_indices(fmap.width, spec.target_width)
    return FeatureMap(fmap.data[np.ix_(rows, cols)])


def resize_mask(mask: np.ndarray, spec: ResizeSpec, threshold: float = 0.5) -> np.ndarray:
    """Resample a binary mask and re-binarize at ``threshold``.

    The mask is interpolated as one bi-quartic channel (values may
    overshoot [0, 1]); output cells with value >= threshold become 1.
    """
    mask = np.asarray(mask)
    if mask.ndim != 2:
        raise ValueError(f"mask must be rank-2, got ndim={mask.ndim}")
    values = np.unique(mask)
    if not np.all(np.isin(values, (0, 1))):
        raise NonBinaryMask(f"mask has non-binary values {values[:5]}")
    if spec.kind == "nearest":
        rows = _nearest_indices(mask.shape[0], spec.target_height)
        cols = _nearest_indices(mask.shape[1], spec.target_width)
        return mask[np.ix_(rows, cols)].astype(np.uint8)
    resized = resize_array(mask.astype(np.float64), spec.target_height, spec.target_width)
    return (resized >= threshold).astype(np.uint8)
