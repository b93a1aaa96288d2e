"""Face detection and pluggable deep-feature extraction.

A backbone is described by a BackboneSpec (input dims, raw feature dims,
whether a detector crop is required) plus a frozen model handle: any
callable mapping an input image array to a raw feature array. The shape
contract is enforced strictly — outputs that do not match the spec's
raw feature dims raise rather than being silently reshaped.

The ``identity`` backbone returns a 32x32x3 image unchanged as its
feature map; it exists so synthetic pipelines have an exact oracle.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from .errors import (
    DetectorFailure,
    ModelLoadFailure,
    NoFaceFound,
    ShapeContractViolation,
)
from .interpolate import ResizeSpec, resize_array, resize_biquartic
from .types import FeatureMap, validate_feature_map

ALIGNED_SIZE = 32

FEATURE_MAGIC = b"RGF1"


@dataclass(frozen=True)
class BackboneSpec:
    """Input and raw-feature tensor contract for one backbone."""

    name: str
    input_height: int
    input_width: int
    input_channels: int
    raw_feature_dims: tuple[int, int, int]
    requires_detection: bool
    model_ref: Optional[Path] = None

    def __post_init__(self):
        if min(self.raw_feature_dims) < 1:
            raise ValueError(f"raw feature dims must be >= 1: {self.raw_feature_dims}")


_BUILTIN_SPECS = {
    "facenet": BackboneSpec("facenet", 160, 160, 3, (3, 3, 1792), True),
    "vggface": BackboneSpec("vggface", 224, 224, 3, (14, 14, 512), False),
    "identity": BackboneSpec("identity", 32, 32, 3, (32, 32, 3), False),
}

BACKBONE_NAMES = tuple(_BUILTIN_SPECS)


def get_backbone_spec(name: str, model_ref: Optional[str | Path] = None) -> BackboneSpec:
    """Look up a builtin backbone spec, optionally binding a model file."""
    if name not in _BUILTIN_SPECS:
        raise ValueError(f"unknown backbone {name!r}, expected one of {BACKBONE_NAMES}")
    spec = _BUILTIN_SPECS[name]
    if model_ref is not None:
        spec = BackboneSpec(
            spec.name,
            spec.input_height,
            spec.input_width,
            spec.input_channels,
            spec.raw_feature_dims,
            spec.requires_detection,
            Path(model_ref),
        )
    return spec


@dataclass(frozen=True)
class FaceBox:
    """Axis-aligned face bounding box in pixel coordinates."""

    x: int
    y: int
    width: int
    height: int
    confidence: float

    def __post_init__(self):
        if self.x < 0 or self.y < 0 or self.width < 1 or self.height < 1:
            raise ValueError(f"degenerate face box {self}")
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence must be in [0, 1], got {self.confidence}")

    @property
    def area(self) -> int:
        return self.width * self.height


#: A detector maps a decoded RGB image to candidate face boxes.
FaceDetector = Callable[[np.ndarray], list[FaceBox]]


def detect_face(
    image: np.ndarray,
    detector: FaceDetector,
    input_size: tuple[int, int],
) -> tuple[FaceBox, np.ndarray]:
    """Pick the best detection and return it with the resized crop.

    Highest confidence wins, ties broken by largest area; the box is
    clipped to the image bounds and the crop resized (bi-quartic) to
    ``input_size``.
    """
    if image.ndim != 3 or min(image.shape) < 1:
        raise ValueError(f"expected a non-empty HxWxC image, got shape {image.shape}")
    try:
        boxes = detector(image)
    except Exception as err:
        raise DetectorFailure(f"face detector failed: {err}") from err
    if not boxes:
        raise NoFaceFound("detector returned zero boxes")
    best = max(boxes, key=lambda b: (b.confidence, b.area))
    y0 = min(best.y, image.shape[0] - 1)
    x0 = min(best.x, image.shape[1] - 1)
    y1 = min(best.y + best.height, image.shape[0])
    x1 = min(best.x + best.width, image.shape[1])
    crop = image[y0:y1, x0:x1]
    if crop.shape[:2] != input_size:
        crop = resize_array(crop, input_size[0], input_size[1])
    return best, crop


class FullFrameDetector:
    """Trivial detector returning the whole frame at confidence 1."""

    def __call__(self, image: np.ndarray) -> list[FaceBox]:
        return [FaceBox(0, 0, image.shape[1], image.shape[0], 1.0)]


class StubDetector:
    """Test double returning a fixed list of boxes."""

    def __init__(self, boxes: list[FaceBox]):
        self._boxes = list(boxes)

    def __call__(self, image: np.ndarray) -> list[FaceBox]:
        return list(self._boxes)


class IdentityBackbone:
    """Pass-through extractor: the input image is the feature map."""

    def __call__(self, image: np.ndarray) -> np.ndarray:
        return np.asarray(image, dtype=np.float64)


class OnnxBackbone:
    """Feature extractor backed by an ONNX session.

    The session must expose one input taking [1, H, W, C] (or [1, C, H,
    W], chosen by ``channels_first``) float32 and return the raw feature
    tensor as its first output. Requires the optional ``onnxruntime``.
    """

    def __init__(self, model_path: str | Path, channels_first: bool = False):
        try:
            import onnxruntime
        except ImportError as err:
            raise ModelLoadFailure(
                "onnxruntime is required for ONNX backbones; "
                "install the 'onnx' extra"
            ) from err
        model_path = Path(model_path)
        if not model_path.exists():
            raise ModelLoadFailure(f"backbone model not found: {model_path}")
        try:
            self._session = onnxruntime.InferenceSession(str(model_path))
        except Exception as err:
            raise ModelLoadFailure(f"could not load {model_path}: {err}") from err
        self._input_name = self._session.get_inputs()[0].name
        self._channels_first = channels_first

    def __call__(self, image: np.ndarray) -> np.ndarray:
        tensor = image.astype(np.float32)
        if self._channels_first:
            tensor = tensor.transpose(2, 0, 1)
        out = self._session.run(None, {self._input_name: tensor[None]})[0][0]
        if self._channels_first and out.ndim == 3:
            out = out.transpose(1, 2, 0)
        return out


class OnnxDetector:
    """Face detector backed by an ONNX session.

    The session takes a [1, H, W, C] float32 image and its first output
    must be [N, 5] rows of (x, y, width, height, confidence) in pixels.
    """

    def __init__(self, model_path: str | Path):
        try:
            import onnxruntime
        except ImportError as err:
            raise ModelLoadFailure(
                "onnxruntime is required for ONNX detectors; "
                "install the 'onnx' extra"
            ) from err
        model_path = Path(model_path)
        if not model_path.exists():
            raise ModelLoadFailure(f"detector model not found: {model_path}")
        try:
            self._session = onnxruntime.InferenceSession(str(model_path))
        except Exception as err:
            raise ModelLoadFailure(f"could not load {model_path}: {err}") from err
        self._input_name = self._session.get_inputs()[0].name

    def __call__(self, image: np.ndarray) -> list[FaceBox]:
        rows = self._session.run(
            None, {self._input_name: image.astype(np.float32)[None]}
        )[0]
        boxes = []
        for x, y, w, h, conf in np.asarray(rows).reshape(-1, 5):
            boxes.append(
                FaceBox(int(x), int(y), int(w), int(h), float(np.clip(conf, 0.0, 1.0)))
            )
        return boxes


def load_backbone_model(spec: BackboneSpec) -> Callable[[np.ndarray], np.ndarray]:
    """Instantiate the frozen model handle for a spec."""
    if spec.name == "identity":
        return IdentityBackbone()
    if spec.model_ref is None:
        raise ModelLoadFailure(f"backbone {spec.name!r} needs a model file")
    return OnnxBackbone(spec.model_ref)


def extract_features(
    image: np.ndarray,
    spec: BackboneSpec,
    model: Callable[[np.ndarray], np.ndarray],
) -> FeatureMap:
    """Run the frozen model and enforce the raw-feature shape contract."""
    expected_in = (spec.input_height, spec.input_width, spec.input_channels)
    if image.shape != expected_in:
        raise ShapeContractViolation(
            f"{spec.name} expects input {expected_in}, got {image.shape}"
        )
    raw = np.asarray(model(image), dtype=np.float64)
    if raw.ndim != 3 or raw.shape != spec.raw_feature_dims:
        raise ShapeContractViolation(
            f"{spec.name} emitted shape {raw.shape}, "
            f"contract is {spec.raw_feature_dims}"
        )
    return validate_feature_map(FeatureMap(raw))


def aligned_features(raw: FeatureMap) -> FeatureMap:
    """Resize raw features to the 32x32 pooling grid, channels preserved."""
    if (raw.height, raw.width) == (ALIGNED_SIZE, ALIGNED_SIZE):
        return raw
    return resize_biquartic(raw, ResizeSpec(ALIGNED_SIZE, ALIGNED_SIZE))


def write_feature_file(path: str | Path, fmap: FeatureMap) -> None:
    """Write a feature map as float32 LE with an RGF1 header."""
    header = FEATURE_MAGIC + struct.pack(
        "<III", fmap.height, fmap.width, fmap.channels
    )
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(fmap.data.astype("<f4").tobytes())


def read_feature_file(path: str | Path) -> FeatureMap:
    """Read a feature map written by ``write_feature_file``."""
    blob = Path(path).read_bytes()
    if len(blob) < 16 or blob[:4] != FEATURE_MAGIC:
        raise ModelLoadFailure(f"{path} is not an RGF1 feature file")
    h, w, c = struct.unpack("<III", blob[4:16])
    expected = 16 + 4 * h * w * c
    if len(blob) != expected:
        raise ModelLoadFailure(
            f"{path}: expected {expected} bytes for {h}x{w}x{c}, got {len(blob)}"
        )
    data = np.frombuffer(blob, dtype="<f4", offset=16).reshape(h, w, c)
    return FeatureMap(data.astype(np.float64))
