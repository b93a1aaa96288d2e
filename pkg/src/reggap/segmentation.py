"""Face-parser adapter: label vocabularies, collapsing, mask splitting.

A parser is any object with ``parse(image) -> LabelMap``, a
``vocabulary`` mapping its raw label integers to canonical regions (or
None for background), and a ``resolution`` (height, width) its label
maps come out at. The pretrained network itself is a frozen external
artifact; this module only adapts its output.
"""

from __future__ import annotations

from pathlib import Path
from typing import Optional, Protocol, runtime_checkable

import numpy as np
from PIL import Image

from .errors import ModelLoadFailure, ParserFailure, UnknownLabel
from .types import (
    BACKGROUND_LABEL,
    CANONICAL_REGIONS,
    LabelMap,
    RegionId,
    RegionMaskSet,
    canonical_palette,
    region_from_name,
)

#: CelebAMask-HQ's 19 source labels collapsed onto the canonical regions.
#: Accessories (glasses, hat, earrings aside, cloth) fold into background
#: or their host region; overridable via a vocabulary file.
CELEBAMASK_HQ_VOCABULARY: dict[int, Optional[RegionId]] = {
    0: None,                # background
    1: RegionId.SKIN,       # skin
    2: RegionId.EYEBROW,    # l_brow
    3: RegionId.EYEBROW,    # r_brow
    4: RegionId.EYES,       # l_eye
    5: RegionId.EYES,       # r_eye
    6: None,                # eye_g (glasses)
    7: RegionId.EAR,        # l_ear
    8: RegionId.EAR,        # r_ear
    9: RegionId.EAR,        # ear_r (earring)
    10: RegionId.NOSE,      # nose
    11: RegionId.LIPS,      # mouth
    12: RegionId.LIPS,      # u_lip
    13: RegionId.LIPS,      # l_lip
    14: RegionId.NECK,      # neck
    15: RegionId.NECK,      # neck_l (necklace)
    16: None,               # cloth
    17: RegionId.HAIR,      # hair
    18: None,               # hat
}


@runtime_checkable
class FaceParser(Protocol):
    """Contract for an external pretrained face parser."""

    vocabulary: dict[int, Optional[RegionId]]
    resolution: tuple[int, int]

    def parse(self, image: np.ndarray) -> LabelMap: ...


def collapse_labels(
    raw: LabelMap, vocabulary: dict[int, Optional[RegionId]]
) -> LabelMap:
    """Map a raw label map onto the 8 canonical regions + background.

    Raises UnknownLabel if a raw label value is absent from ``vocabulary``.
    Idempotent when applied to already-canonical maps with the canonical
    palette as vocabulary.
    """
    present = np.unique(raw.labels)
    if present.size and int(present[0]) < 0:
        raise UnknownLabel(f"negative label value {int(present[0])}")
    missing = [int(v) for v in present if int(v) not in vocabulary]
    if missing:
        raise UnknownLabel(f"labels {missing} not in vocabulary")
    lut = np.zeros(int(present.max(initial=0)) + 1, dtype=np.int64)
    for value in present:
        region = vocabulary[int(value)]
        lut[value] = BACKGROUND_LABEL if region is None else int(region) + 1
    return LabelMap(lut[raw.labels], canonical_palette())


def label_map_to_masks(canonical: LabelMap) -> RegionMaskSet:
    """Split a canonical label map into one binary mask per region.

    Every region key is present even when all-zero; the result always
    passes ``validate_mask_set`` (disjoint by construction).
    """
    present = np.unique(canonical.labels)
    bad = [int(v) for v in present if not (0 <= int(v) <= len(CANONICAL_REGIONS))]
    if bad:
        raise UnknownLabel(f"label map is not canonical, found values {bad}")
    masks = {
        region: (canonical.labels == int(region) + 1).astype(np.uint8)
        for region in CANONICAL_REGIONS
    }
    return RegionMaskSet(masks)


def masks_to_label_map(masks: RegionMaskSet) -> LabelMap:
    """Inverse of ``label_map_to_masks`` for disjoint mask sets."""
    labels = np.zeros((masks.height, masks.width), dtype=np.int64)
    for region in CANONICAL_REGIONS:
        labels[np.asarray(masks.masks[region]) == 1] = int(region) + 1
    return LabelMap(labels, canonical_palette())


def parse_face(image: np.ndarray, parser: FaceParser) -> RegionMaskSet:
    """Run the parser on a detector crop and split into region masks.

    External-model errors (and vocabulary misses) are wrapped in
    ParserFailure with the original exception chained as the cause.
    """
    try:
        raw = parser.parse(image)
    except Exception as err:
        raise ParserFailure(f"face parser failed: {err}") from err
    try:
        canonical = collapse_labels(raw, parser.vocabulary)
    except UnknownLabel as err:
        raise ParserFailure(f"parser emitted unknown label: {err}") from err
    return label_map_to_masks(canonical)


class StubFaceParser:
    """Test double returning a fixed label map regardless of input."""

    def __init__(
        self,
        labels: np.ndarray,
        vocabulary: Optional[dict[int, Optional[RegionId]]] = None,
    ):
        self.vocabulary = canonical_palette() if vocabulary is None else vocabulary
        self._labels = np.asarray(labels)
        self.resolution = self._labels.shape

    def parse(self, image: np.ndarray) -> LabelMap:
        palette = {int(v): self.vocabulary.get(int(v)) for v in np.unique(self._labels)}
        return LabelMap(self._labels, palette)


class OnnxFaceParser:
    """ONNX-backed face parser (BiSeNet-style CelebAMask-HQ models).

    Expects a session taking a normalized [1, 3, H, W] float32 image and
    returning [1, n_labels, H, W] logits; the label map is the argmax.
    Requires the optional ``onnxruntime`` dependency.
    """

    def __init__(
        self,
        model_path: str | Path,
        resolution: int = 512,
        vocabulary: Optional[dict[int, Optional[RegionId]]] = None,
        mean: tuple[float, float, float] = (0.485, 0.456, 0.406),
        std: tuple[float, float, float] = (0.229, 0.224, 0.225),
    ):
        try:
            import onnxruntime
        except ImportError as err:
            raise ModelLoadFailure(
                "onnxruntime is required for ONNX parsers; "
                "install the 'onnx' extra"
            ) from err
        model_path = Path(model_path)
        if not model_path.exists():
            raise ModelLoadFailure(f"parser model not found: {model_path}")
        try:
            self._session = onnxruntime.InferenceSession(str(model_path))
        except Exception as err:
            raise ModelLoadFailure(f"could not load {model_path}: {err}") from err
        self._input_name = self._session.get_inputs()[0].name
        self._mean = np.asarray(mean, dtype=np.float32)
        self._std = np.asarray(std, dtype=np.float32)
        self.resolution = (resolution, resolution)
        self.vocabulary = (
            dict(CELEBAMASK_HQ_VOCABULARY) if vocabulary is None else vocabulary
        )

    def parse(self, image: np.ndarray) -> LabelMap:
        from .interpolate import resize_array

        side = self.resolution[0]
        if image.shape[:2] != (side, side):
            image = np.clip(resize_array(image, side, side), 0.0, 1.0)
        tensor = ((image.astype(np.float32) - self._mean) / self._std)
        tensor = tensor.transpose(2, 0, 1)[None]
        logits = self._session.run(None, {self._input_name: tensor})[0]
        labels = np.argmax(logits[0], axis=0).astype(np.int64)
        palette = {int(v): self.vocabulary.get(int(v)) for v in np.unique(labels)}
        return LabelMap(labels, palette)


def load_vocabulary(path: str | Path) -> dict[int, Optional[RegionId]]:
    """Parse a vocabulary override file of lines ``<int> -> <region name>``."""
    vocabulary: dict[int, Optional[RegionId]] = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        try:
            left, right = line.split("->")
            vocabulary[int(left.strip())] = region_from_name(right)
        except (ValueError, KeyError) as err:
            raise UnknownLabel(f"{path}:{lineno}: bad vocabulary line {line!r}") from err
    return vocabulary


def write_label_png(path: str | Path, label_map: LabelMap) -> None:
    """Write a canonical label map as an 8-bit single-channel PNG."""
    labels = label_map.labels
    if labels.min(initial=0) < 0 or labels.max(initial=0) > 255:
        raise ValueError("label values must fit in 8 bits")
    Image.fromarray(labels.astype(np.uint8), mode="L").save(Path(path), format="PNG")


def read_label_png(path: str | Path) -> LabelMap:
    """Read a canonical label map from an 8-bit single-channel PNG."""
    with Image.open(Path(path)) as img:
        labels = np.asarray(img.convert("L"), dtype=np.int64)
    return LabelMap(labels, canonical_palette())
