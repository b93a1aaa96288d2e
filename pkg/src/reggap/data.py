"""Manifest ingestion, split protocols, and the synthetic dataset generator.

Manifests are UTF-8 CSV files with header ``id,image_path,bmi,gender,
identity,split``; empty optional fields are allowed and image paths are
resolved relative to the manifest's directory.

The synthetic generator plants a BMI-coded intensity in one region of a
fixed face-like layout and Gaussian noise everywhere else, and emits
perfect label maps alongside, so the whole pipeline can be verified
without any real images or frozen models. BMI codes are quantized to the
8-bit PNG grid, which makes the zero-noise construction exactly
invertible through the files on disk.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional, Union

import numpy as np
from PIL import Image

from .errors import DuplicateId, MalformedRow, MissingImage
from .segmentation import write_label_png
from .types import BmiRecord, LabelMap, RegionId, canonical_palette

MANIFEST_COLUMNS = ("id", "image_path", "bmi", "gender", "identity", "split")


@dataclass(frozen=True)
class SequentialFirstK:
    """First k records (file order) train, the rest test."""

    k: int


@dataclass(frozen=True)
class RandomFraction:
    """Seeded shuffle; first floor(n * train_frac) records train."""

    train_frac: float
    seed: int
    group_by_identity: bool = False

    def __post_init__(self):
        if not 0.0 < self.train_frac < 1.0:
            raise ValueError(f"train_frac must be in (0, 1), got {self.train_frac}")


@dataclass(frozen=True)
class Preassigned:
    """Use the split column from the manifest file."""


SplitPolicy = Union[SequentialFirstK, RandomFraction, Preassigned]


@dataclass(frozen=True)
class Manifest:
    """Validated, ordered dataset records plus the policy that split them."""

    name: str
    records: tuple[BmiRecord, ...]
    policy: Optional[SplitPolicy] = None

    def __len__(self) -> int:
        return len(self.records)

    def train(self) -> tuple[BmiRecord, ...]:
        return tuple(r for r in self.records if r.split == "train")

    def test(self) -> tuple[BmiRecord, ...]:
        return tuple(r for r in self.records if r.split == "test")

    def by_id(self) -> dict[str, BmiRecord]:
        return {r.id: r for r in self.records}


def _parse_row(
    row: dict[str, str], line: int, base_dir: Path, require_images: bool
) -> BmiRecord:
    if None in row or any(row.get(col) is None for col in MANIFEST_COLUMNS):
        raise MalformedRow(line, f"expected {len(MANIFEST_COLUMNS)} columns")
    try:
        bmi = float(row["bmi"].strip())
    except ValueError:
        raise MalformedRow(line, f"bmi {row['bmi']!r} is not a number") from None
    image_path = Path(row["image_path"].strip())
    if not image_path.is_absolute():
        image_path = base_dir / image_path
    if require_images and not image_path.exists():
        raise MissingImage(f"line {line}: image not found: {image_path}")
    try:
        return BmiRecord(
            id=row["id"].strip(),
            image_ref=str(image_path),
            bmi=bmi,
            gender=row["gender"].strip() or None,
            identity=row["identity"].strip() or None,
            split=row["split"].strip() or None,
        )
    except ValueError as err:
        raise MalformedRow(line, str(err)) from None


def load_manifest(
    path: str | Path,
    policy: Optional[SplitPolicy] = None,
    name: Optional[str] = None,
    require_images: bool = True,
) -> Manifest:
    """Parse and validate a manifest CSV, then assign splits per policy.

    ``require_images=False`` skips the image-existence check for stages
    that consume cached embeddings rather than pixels.
    """
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or tuple(reader.fieldnames) != MANIFEST_COLUMNS:
            raise MalformedRow(
                1, f"header must be {','.join(MANIFEST_COLUMNS)}, got {reader.fieldnames}"
            )
        records = []
        lines = []
        seen: set[str] = set()
        for line, row in enumerate(reader, start=2):
            record = _parse_row(row, line, path.parent, require_images)
            if record.id in seen:
                raise DuplicateId(f"line {line}: duplicate record id {record.id!r}")
            seen.add(record.id)
            records.append(record)
            lines.append(line)

    if policy is None:
        pass
    elif isinstance(policy, SequentialFirstK):
        if not 0 <= policy.k <= len(records):
            raise ValueError(f"k={policy.k} out of range for {len(records)} records")
        records = [
            replace(r, split="train" if i < policy.k else "test")
            for i, r in enumerate(records)
        ]
    elif isinstance(policy, RandomFraction):
        records = _assign_random(
            records, policy.train_frac, policy.seed, policy.group_by_identity
        )
    elif isinstance(policy, Preassigned):
        for record, line in zip(records, lines):
            if record.split is None:
                raise MalformedRow(line, f"record {record.id!r} has no split")
    else:
        raise TypeError(f"unknown split policy {policy!r}")

    return Manifest(name or path.stem, tuple(records), policy)


def _assign_random(
    records: list[BmiRecord], train_frac: float, seed: int, group_by_identity: bool
) -> list[BmiRecord]:
    rng = np.random.default_rng(seed)
    n_train = int(len(records) * train_frac)
    train_idx: set[int] = set()
    if group_by_identity:
        groups: dict[str, list[int]] = {}
        for i, record in enumerate(records):
            groups.setdefault(record.identity or record.id, []).append(i)
        keys = list(groups)
        for key_idx in rng.permutation(len(keys)):
            if len(train_idx) >= n_train:
                break
            train_idx.update(groups[keys[key_idx]])
    else:
        order = rng.permutation(len(records))
        train_idx = set(int(i) for i in order[:n_train])
    return [
        replace(r, split="train" if i in train_idx else "test")
        for i, r in enumerate(records)
    ]


def random_split(
    manifest: Manifest,
    train_frac: float,
    seed: int,
    group_by_identity: bool = False,
) -> Manifest:
    """Reassign splits with a deterministic seeded shuffle."""
    if not 0.0 < train_frac < 1.0:
        raise ValueError(f"train_frac must be in (0, 1), got {train_frac}")
    records = _assign_random(list(manifest.records), train_frac, seed, group_by_identity)
    return Manifest(
        manifest.name, tuple(records), RandomFraction(train_frac, seed, group_by_identity)
    )


# --- image I/O ---------------------------------------------------------------


def load_image(path: str | Path) -> np.ndarray:
    """Decode a PNG into an HxWx3 float64 array in [0, 1]."""
    with Image.open(Path(path)) as img:
        arr = np.asarray(img.convert("RGB"), dtype=np.float64)
    return arr / 255.0


def save_image(path: str | Path, image: np.ndarray) -> None:
    """Quantize a [0, 1] float image to 8 bits and write a PNG."""
    quantized = np.rint(np.clip(image, 0.0, 1.0) * 255.0).astype(np.uint8)
    Image.fromarray(quantized, mode="RGB").save(Path(path), format="PNG")


# --- synthetic dataset -------------------------------------------------------


@dataclass(frozen=True)
class SyntheticSpec:
    """Parameters of the planted-signal synthetic dataset."""

    n: int
    image_size: int = 32
    signal_region: RegionId = RegionId.NOSE
    noise_std: float = 0.3
    bmi_range: tuple[float, float] = (16.0, 40.0)
    seed: int = 0

    def __post_init__(self):
        if self.n < 8:
            raise ValueError(f"n must be >= 8, got {self.n}")
        if self.image_size < 8:
            raise ValueError(f"image_size must be >= 8, got {self.image_size}")
        if not self.bmi_range[0] < self.bmi_range[1]:
            raise ValueError(f"bmi_range must be increasing, got {self.bmi_range}")
        if self.noise_std < 0:
            raise ValueError("noise_std must be >= 0")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")


#: Region rectangles of the fixed face layout, in 32-grid units
#: (row0, row1, col0, col1), half-open. SKIN is painted first and the
#: inner regions over it; the strips beside the lower face stay background.
_LAYOUT_32: tuple[tuple[RegionId, tuple[int, int, int, int]], ...] = (
    (RegionId.SKIN, (6, 28, 4, 28)),
    (RegionId.EYEBROW, (6, 11, 4, 28)),
    (RegionId.EYES, (11, 16, 4, 28)),
    (RegionId.NOSE, (16, 22, 13, 19)),
    (RegionId.LIPS, (23, 28, 8, 24)),
    (RegionId.EAR, (6, 21, 0, 4)),
    (RegionId.EAR, (6, 21, 28, 32)),
    (RegionId.HAIR, (0, 6, 0, 32)),
    (RegionId.NECK, (28, 32, 0, 32)),
)

#: Number of distinct intensity levels the BMI code is quantized to;
#: matches the 8-bit PNG grid so codes survive the round trip exactly.
BMI_CODE_LEVELS = 256


def synthetic_label_map(image_size: int = 32) -> LabelMap:
    """The fixed face-like label layout, scaled to ``image_size``."""
    labels = np.zeros((image_size, image_size), dtype=np.int64)

    def scale(v: int) -> int:
        return v * image_size // 32

    for region, (r0, r1, c0, c1) in _LAYOUT_32:
        labels[scale(r0):scale(r1), scale(c0):scale(c1)] = int(region) + 1
    return LabelMap(labels, canonical_palette())


def bmi_from_code(code: int, bmi_range: tuple[float, float]) -> float:
    """The planted linear code: intensity level k -> BMI."""
    low, high = bmi_range
    return low + (high - low) * (code / (BMI_CODE_LEVELS - 1))


def code_from_intensity(mean_intensity: float) -> int:
    """Invert the code from a region's mean intensity in [0, 1]."""
    return int(round(mean_intensity * (BMI_CODE_LEVELS - 1)))


def generate_synthetic(spec: SyntheticSpec, out_dir: str | Path) -> Manifest:
    """Write images/, masks/ and manifest.csv; returns the loaded manifest.

    Pixels inside the signal region carry the BMI code on all three
    channels; everything else is 0.5 plus Gaussian noise, clipped to
    [0, 1]. Fully deterministic given the seed.
    """
    out_dir = Path(out_dir)
    images_dir = out_dir / "images"
    masks_dir = out_dir / "masks"
    images_dir.mkdir(parents=True, exist_ok=True)
    masks_dir.mkdir(parents=True, exist_ok=True)

    label_map = synthetic_label_map(spec.image_size)
    signal = label_map.labels == int(spec.signal_region) + 1

    rng = np.random.default_rng(spec.seed)
    rows = []
    for i in range(spec.n):
        record_id = f"synth-{i:04d}"
        code = int(rng.integers(0, BMI_CODE_LEVELS))
        bmi = bmi_from_code(code, spec.bmi_range)
        image = 0.5 + rng.normal(
            0.0, spec.noise_std, size=(spec.image_size, spec.image_size, 3)
        )
        image[signal] = code / (BMI_CODE_LEVELS - 1)
        save_image(images_dir / f"{record_id}.png", image)
        write_label_png(masks_dir / f"{record_id}.labels.png", label_map)
        gender = "male" if i % 2 == 0 else "female"
        rows.append((record_id, f"images/{record_id}.png", repr(bmi), gender, "", ""))

    manifest_path = out_dir / "manifest.csv"
    with open(manifest_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(MANIFEST_COLUMNS)
        writer.writerows(rows)
    return load_manifest(manifest_path, name=f"synthetic-{spec.n}")
