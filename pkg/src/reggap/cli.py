"""Command-line pipeline staged as subcommands.

synth, validate, segment, embed, train, evaluate, predict and
export-embeddings compose the full workflow; segment and embed cache
their artifacts and are idempotent unless --force is given.

Exit codes: 0 success, 1 generic failure, 2 no face found, 3 model load
failure, 4 data/manifest/cache error.
"""

from __future__ import annotations

import argparse
import json
import shutil
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Callable, Iterable, Optional

import numpy as np

from . import cache as cache_io
from .backbones import (
    ALIGNED_SIZE,
    FaceDetector,
    OnnxDetector,
    aligned_features,
    detect_face,
    extract_features,
    get_backbone_spec,
    load_backbone_model,
    write_feature_file,
)
from .cache import CacheRecord, EmbeddingCacheWriter
from .config import PipelineConfig, load_pipeline_config
from .data import (
    Manifest,
    Preassigned,
    RandomFraction,
    SequentialFirstK,
    SplitPolicy,
    SyntheticSpec,
    generate_synthetic,
    load_image,
    load_manifest,
)
from .errors import (
    CacheIntegrityError,
    DuplicateId,
    EmptyDataset,
    IncompatibleCheckpoint,
    MalformedRow,
    MissingImage,
    ModelLoadFailure,
    NoFaceFound,
    RegGapError,
)
from .head import HeadConfig, fit, init_head, load_checkpoint, predict, save_checkpoint
from .interpolate import ResizeSpec, resize_array, resize_mask
from .metrics import (
    build_report,
    format_report_table,
    paired_t_test,
    report_to_json,
)
from .pooling import gap, reg_gap
from .segmentation import (
    OnnxFaceParser,
    label_map_to_masks,
    load_vocabulary,
    masks_to_label_map,
    parse_face,
    read_label_png,
    write_label_png,
)
from .types import PoolKind, RegionId, RegionMaskSet

EXIT_OK = 0
EXIT_GENERIC = 1
EXIT_NO_FACE = 2
EXIT_MODEL = 3
EXIT_DATA = 4


def _parse_split(text: str) -> SplitPolicy:
    """preassigned | sequential:<k> | random:<frac>:<seed>[:by-identity]"""
    parts = text.split(":")
    if parts[0] == "preassigned" and len(parts) == 1:
        return Preassigned()
    if parts[0] == "sequential" and len(parts) == 2:
        return SequentialFirstK(int(parts[1]))
    if parts[0] == "random" and len(parts) in (3, 4):
        if len(parts) == 4 and parts[3] != "by-identity":
            raise ValueError(f"unknown split modifier {parts[3]!r}")
        return RandomFraction(float(parts[1]), int(parts[2]), len(parts) == 4)
    raise ValueError(f"cannot parse split policy {text!r}")


def _config_from_args(args) -> PipelineConfig:
    overrides = {
        key: getattr(args, key, None)
        for key in (
            "backbone", "backbone_model", "parser_model", "detector_model",
            "pooling", "region_norm", "cache_dir", "seed",
            "hidden1", "hidden2", "dropout_rate", "max_norm", "learning_rate",
            "beta1", "beta2", "epsilon", "decay", "batch_size", "epochs",
        )
    }
    if getattr(args, "include_background", False):
        overrides["include_background"] = True
    return load_pipeline_config(getattr(args, "config", None), overrides)


def _labels_dir(config: PipelineConfig) -> Path:
    return Path(config.cache_dir) / "labels"


def _map_ordered(fn: Callable, items: Iterable, workers: int) -> list:
    items = list(items)
    if workers <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


# --- synth -------------------------------------------------------------------


def cmd_synth(args) -> int:
    spec = SyntheticSpec(
        n=args.n,
        image_size=args.image_size,
        signal_region=RegionId[args.signal_region.upper()],
        noise_std=args.noise_std,
        bmi_range=(args.bmi_low, args.bmi_high),
        seed=args.seed,
    )
    manifest = generate_synthetic(spec, args.out)
    print(f"wrote {len(manifest)} records under {args.out}")
    return EXIT_OK


# --- validate ----------------------------------------------------------------


def cmd_validate(args) -> int:
    policy = _parse_split(args.split) if args.split else None
    manifest = load_manifest(args.manifest, policy=policy)
    n_train = len(manifest.train())
    n_test = len(manifest.test())
    genders = sum(1 for r in manifest.records if r.gender is not None)
    print(
        f"{manifest.name}: {len(manifest)} records "
        f"({n_train} train / {n_test} test / "
        f"{len(manifest) - n_train - n_test} unassigned), "
        f"{genders} with gender"
    )
    return EXIT_OK


# --- segment -----------------------------------------------------------------


def cmd_segment(args) -> int:
    config = _config_from_args(args)
    manifest = load_manifest(args.manifest)
    labels_dir = _labels_dir(config)
    labels_dir.mkdir(parents=True, exist_ok=True)

    parser = None
    masks_dir = Path(args.masks_dir) if args.masks_dir else None
    if masks_dir is None:
        if config.parser_model is None:
            raise ModelLoadFailure(
                "segment needs --masks-dir (precomputed label maps) "
                "or a parser_model in the config"
            )
        vocabulary = load_vocabulary(args.vocabulary) if args.vocabulary else None
        parser = OnnxFaceParser(config.parser_model, vocabulary=vocabulary)

    written = skipped = failed = 0
    for record in manifest.records:
        target = labels_dir / f"{record.id}.labels.png"
        if target.exists() and not args.force:
            skipped += 1
            continue
        try:
            if masks_dir is not None:
                source = masks_dir / f"{record.id}.labels.png"
                if not source.exists():
                    raise MissingImage(f"no label map for {record.id} in {masks_dir}")
                shutil.copyfile(source, target)
            else:
                image = load_image(record.image_ref)
                masks = parse_face(image, parser)
                write_label_png(target, masks_to_label_map(masks))
            written += 1
        except RegGapError as err:
            failed += 1
            print(f"segment: {record.id}: {err}", file=sys.stderr)
    print(f"segment: {written} written, {skipped} cached, {failed} failed")
    return EXIT_OK if failed == 0 else EXIT_GENERIC


# --- embed -------------------------------------------------------------------


def _pooling_masks(
    labels_path: Path, threshold: float
) -> RegionMaskSet:
    label_map = read_label_png(labels_path)
    masks = label_map_to_masks(label_map)
    if (masks.height, masks.width) == (ALIGNED_SIZE, ALIGNED_SIZE):
        return masks
    spec = ResizeSpec(ALIGNED_SIZE, ALIGNED_SIZE)
    resized = {
        region: resize_mask(mask, spec, threshold)
        for region, mask in masks.masks.items()
    }
    return RegionMaskSet(resized)


def _load_detector(config: PipelineConfig) -> FaceDetector:
    if config.detector_model is None:
        raise ModelLoadFailure(
            f"backbone {config.backbone!r} requires face detection; "
            "set detector_model in the config"
        )
    return OnnxDetector(config.detector_model)


def cmd_embed(args) -> int:
    config = _config_from_args(args)
    manifest = load_manifest(args.manifest)
    out_path = Path(args.out)
    if out_path.exists() and not args.force:
        cache_io.read_embedding_cache(out_path)  # verify, then leave alone
        print(f"embed: {out_path} already exists, skipping (use --force)")
        return EXIT_OK

    spec = get_backbone_spec(config.backbone, config.backbone_model)
    model = load_backbone_model(spec)
    detector = _load_detector(config) if spec.requires_detection else None
    kind = PoolKind(config.pooling)
    labels_dir = _labels_dir(config)

    features_dir = Path(args.features_dir) if args.features_dir else None
    if features_dir is not None:
        features_dir.mkdir(parents=True, exist_ok=True)

    def embed_one(record):
        try:
            image = load_image(record.image_ref)
            expected = (spec.input_height, spec.input_width, spec.input_channels)
            if spec.requires_detection:
                _, crop = detect_face(image, detector, expected[:2])
            elif image.shape != expected:
                crop = resize_array(image, expected[0], expected[1])
            else:
                crop = image
            raw = extract_features(crop, spec, model)
            if features_dir is not None:
                write_feature_file(features_dir / f"{record.id}.feat", raw)
            feat = aligned_features(raw)
            if kind is PoolKind.REG_GAP:
                masks = _pooling_masks(
                    labels_dir / f"{record.id}.labels.png", config.mask_threshold
                )
                embedding = reg_gap(
                    feat,
                    masks,
                    region_norm=config.region_norm,
                    include_background=config.include_background,
                    empty_region_policy=config.empty_region_policy,
                    source_backbone=spec.name,
                )
            else:
                embedding = gap(feat, source_backbone=spec.name)
            values = embedding.values.astype(np.float32)
            return record, values, None
        except NoFaceFound as err:
            return record, None, str(err)

    results = _map_ordered(embed_one, manifest.records, args.workers)

    channels = spec.raw_feature_dims[2]
    written = skipped = 0
    with EmbeddingCacheWriter(out_path, channels, kind) as writer:
        for record, values, reason in results:
            if values is None:
                skipped += 1
                print(f"embed: skipping {record.id}: {reason}", file=sys.stderr)
                continue
            writer.add(CacheRecord(record.id, record.gender, record.bmi, values))
            written += 1
    cache_io.read_embedding_cache(out_path)  # integrity check on completion
    cache_io.write_cache_sidecar(
        out_path,
        {
            "format": "RGE1",
            "backbone": spec.name,
            "channels": channels,
            "pooling": kind.value,
            "region_norm": config.region_norm,
            "include_background": config.include_background,
            "seed": config.seed,
        },
    )
    print(f"embed: {written} embeddings written, {skipped} skipped -> {out_path}")
    return EXIT_OK


# --- train -------------------------------------------------------------------


def _join_embeddings(manifest: Manifest, cache: cache_io.EmbeddingCache, split: str):
    by_id = cache.by_id()
    pairs = []
    kept_records = []
    for record in manifest.records:
        if record.split != split:
            continue
        cached = by_id.get(record.id)
        if cached is None:
            print(f"warning: no embedding for {record.id}, dropped", file=sys.stderr)
            continue
        pairs.append((cached.values.astype(np.float64), record.bmi))
        kept_records.append(record)
    return pairs, kept_records


def cmd_train(args) -> int:
    config = _config_from_args(args)
    policy = _parse_split(args.split)
    manifest = load_manifest(args.manifest, policy=policy, require_images=False)
    cache = cache_io.read_embedding_cache(args.embeddings)
    sidecar = cache_io.read_cache_sidecar(args.embeddings)

    train_pairs, _ = _join_embeddings(manifest, cache, "train")
    if not train_pairs:
        raise EmptyDataset("train split is empty")

    head_config = HeadConfig(
        input_dim=cache.channels, seed=config.seed, **config.head
    )
    params = init_head(head_config)

    out_path = Path(args.out)
    log_path = out_path.with_name(out_path.name + ".train.log")
    log_lines = []
    stride = max(1, head_config.epochs // 10)

    def on_epoch(epoch: int, loss: float) -> None:
        log_lines.append(f"epoch {epoch}\tmse {loss!r}")
        if epoch % stride == 0 or epoch == head_config.epochs - 1:
            print(f"train: epoch {epoch} mse={loss:.6f}")

    params, history = fit(params, train_pairs, head_config, on_epoch_end=on_epoch)
    save_checkpoint(
        out_path,
        params,
        head_config,
        metadata={
            "backbone": sidecar.get("backbone"),
            "pooling": sidecar.get("pooling"),
            "region_norm": sidecar.get("region_norm"),
            "include_background": sidecar.get("include_background"),
            "seed": config.seed,
            "n_train": len(train_pairs),
            "final_mse": history[-1],
        },
    )
    log_path.write_text("\n".join(log_lines) + "\n")
    print(f"train: {len(train_pairs)} samples, final mse={history[-1]:.6f} -> {out_path}")
    return EXIT_OK


# --- evaluate ----------------------------------------------------------------


def _checkpoint_predictions(
    checkpoint: str | Path, cache: cache_io.EmbeddingCache, records
) -> tuple[list[float], list[float], list[Optional[str]]]:
    params, _, _ = load_checkpoint(checkpoint)
    by_id = cache.by_id()
    truth, genders, embeddings = [], [], []
    for record in records:
        cached = by_id.get(record.id)
        if cached is None:
            print(f"warning: no embedding for {record.id}, dropped", file=sys.stderr)
            continue
        truth.append(record.bmi)
        genders.append(record.gender)
        embeddings.append(cached.values.astype(np.float64))
    return truth, predict(params, embeddings), genders


def _check_compat(checkpoint: str | Path, sidecar: dict) -> None:
    _, _, meta = load_checkpoint(checkpoint)
    for key in ("backbone", "pooling", "region_norm"):
        if meta.get(key) != sidecar.get(key):
            raise IncompatibleCheckpoint(
                f"checkpoint {key}={meta.get(key)!r} but cache has "
                f"{key}={sidecar.get(key)!r}"
            )


def cmd_evaluate(args) -> int:
    policy = _parse_split(args.split)
    manifest = load_manifest(args.manifest, policy=policy, require_images=False)
    cache = cache_io.read_embedding_cache(args.embeddings)
    sidecar = cache_io.read_cache_sidecar(args.embeddings)
    _check_compat(args.checkpoint, sidecar)

    test_records = manifest.test()
    if not test_records:
        raise EmptyDataset("test split is empty")
    truth, pred, genders = _checkpoint_predictions(args.checkpoint, cache, test_records)
    if not truth:
        raise EmptyDataset("no test records had embeddings")
    report = build_report(truth, pred, genders)

    significance = None
    if args.compare:
        _check_compat(args.compare, sidecar)
        truth_b, pred_b, _ = _checkpoint_predictions(args.compare, cache, test_records)
        if truth_b != truth:
            raise IncompatibleCheckpoint("compared checkpoints saw different records")
        errors_a = [abs(t - p) for t, p in zip(truth, pred)]
        errors_b = [abs(t - p) for t, p in zip(truth_b, pred_b)]
        significance = paired_t_test(errors_a, errors_b)

    print(format_report_table(report))
    if significance is not None:
        print(
            f"paired t-test vs {args.compare}: t={significance.t:.6f} "
            f"p={significance.p_value:.6g}"
            + (" (degenerate)" if significance.degenerate else "")
        )
    report_path = Path(
        args.report_out
        if args.report_out
        else str(args.checkpoint) + ".report.json"
    )
    report_path.write_text(
        json.dumps(report_to_json(report, significance), indent=2, sort_keys=True) + "\n"
    )
    print(f"evaluate: report -> {report_path}")
    return EXIT_OK


# --- predict -----------------------------------------------------------------


def cmd_predict(args) -> int:
    config = _config_from_args(args)
    try:
        params, _, meta = load_checkpoint(args.checkpoint)
    except (IncompatibleCheckpoint, OSError) as err:
        raise ModelLoadFailure(f"cannot load checkpoint: {err}") from err

    backbone = meta.get("backbone") or config.backbone
    spec = get_backbone_spec(backbone, config.backbone_model)
    model = load_backbone_model(spec)
    pooling = PoolKind(meta.get("pooling") or config.pooling)

    image = load_image(args.image)
    expected = (spec.input_height, spec.input_width, spec.input_channels)
    if spec.requires_detection:
        detector = _load_detector(config)
        _, crop = detect_face(image, detector, expected[:2])
    elif image.shape != expected:
        crop = resize_array(image, expected[0], expected[1])
    else:
        crop = image
    feat = aligned_features(extract_features(crop, spec, model))

    region_pixels: dict[str, int] = {}
    if pooling is PoolKind.REG_GAP:
        if args.labels:
            masks = _pooling_masks(Path(args.labels), config.mask_threshold)
        elif config.parser_model:
            parser = OnnxFaceParser(config.parser_model)
            parsed = parse_face(crop, parser)
            spec32 = ResizeSpec(ALIGNED_SIZE, ALIGNED_SIZE)
            masks = RegionMaskSet(
                {
                    r: resize_mask(m, spec32, config.mask_threshold)
                    for r, m in parsed.masks.items()
                }
            )
        else:
            raise ModelLoadFailure(
                "reg_gap prediction needs --labels or a parser_model"
            )
        region_pixels = {
            r.name.lower(): int(np.sum(masks.masks[r])) for r in masks.masks
        }
        embedding = reg_gap(
            feat,
            masks,
            region_norm=meta.get("region_norm") or config.region_norm,
            include_background=bool(
                meta.get("include_background", config.include_background)
            ),
            empty_region_policy=config.empty_region_policy,
            source_backbone=spec.name,
        )
    else:
        embedding = gap(feat, source_backbone=spec.name)

    value = predict(params, [embedding.values])[0]
    print(f"BMI: {value:.2f}")
    print(json.dumps({"bmi": value, "region_pixels": region_pixels}, sort_keys=True))
    return EXIT_OK


# --- export ------------------------------------------------------------------


def cmd_export(args) -> int:
    cache = cache_io.read_embedding_cache(args.embeddings)
    count = cache_io.export_embeddings_csv(cache, args.out)
    print(f"export: {count} rows -> {args.out}")
    return EXIT_OK


# --- parser ------------------------------------------------------------------


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="JSON pipeline config file")
    parser.add_argument("--backbone", choices=("facenet", "vggface", "identity"))
    parser.add_argument("--backbone-model", dest="backbone_model")
    parser.add_argument("--parser-model", dest="parser_model")
    parser.add_argument("--detector-model", dest="detector_model")
    parser.add_argument("--pooling", choices=("gap", "reg_gap"))
    parser.add_argument("--region-norm", dest="region_norm",
                        choices=("support", "full_grid"))
    parser.add_argument("--include-background", dest="include_background",
                        action="store_true", default=False)
    parser.add_argument("--cache-dir", dest="cache_dir")
    parser.add_argument("--seed", type=int)


def _add_head_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--epochs", type=int)
    parser.add_argument("--batch-size", dest="batch_size", type=int)
    parser.add_argument("--learning-rate", dest="learning_rate", type=float)
    parser.add_argument("--dropout-rate", dest="dropout_rate", type=float)
    parser.add_argument("--epsilon", type=float)
    parser.add_argument("--max-norm", dest="max_norm", type=float)
    parser.add_argument("--hidden1", type=int)
    parser.add_argument("--hidden2", type=int)
    parser.add_argument("--beta1", type=float)
    parser.add_argument("--beta2", type=float)
    parser.add_argument("--decay", type=float)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="reggap",
        description="Region-aware pooled BMI regression pipeline",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--image-size", dest="image_size", type=int, default=32)
    p.add_argument("--signal-region", dest="signal_region", default="nose")
    p.add_argument("--noise-std", dest="noise_std", type=float, default=0.3)
    p.add_argument("--bmi-low", dest="bmi_low", type=float, default=16.0)
    p.add_argument("--bmi-high", dest="bmi_high", type=float, default=40.0)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("validate", help="check a manifest file")
    p.add_argument("--manifest", required=True)
    p.add_argument("--split", help="optionally apply a split policy")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("segment", help="build the label-map cache")
    p.add_argument("--manifest", required=True)
    p.add_argument("--masks-dir", dest="masks_dir",
                   help="copy precomputed label maps instead of parsing")
    p.add_argument("--vocabulary", help="label remapping file for the parser")
    p.add_argument("--force", action="store_true")
    _add_config_flags(p)
    p.set_defaults(func=cmd_segment)

    p = sub.add_parser("embed", help="extract, pool and cache embeddings")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True, help="embedding cache file")
    p.add_argument("--features-dir", dest="features_dir",
                   help="also dump raw per-image feature files here")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--force", action="store_true")
    _add_config_flags(p)
    p.set_defaults(func=cmd_embed)

    p = sub.add_parser("train", help="train the regression head")
    p.add_argument("--manifest", required=True)
    p.add_argument("--embeddings", required=True)
    p.add_argument("--out", required=True, help="checkpoint file")
    p.add_argument("--split", default="preassigned",
                   help="preassigned | sequential:<k> | random:<frac>:<seed>[:by-identity]")
    _add_config_flags(p)
    _add_head_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="evaluate a checkpoint on the test split")
    p.add_argument("--manifest", required=True)
    p.add_argument("--embeddings", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", default="preassigned")
    p.add_argument("--compare", help="second checkpoint for a paired t-test")
    p.add_argument("--report-out", dest="report_out")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("predict", help="predict BMI for one image")
    p.add_argument("--image", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--labels", help="precomputed label-map PNG for reg_gap")
    _add_config_flags(p)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("export-embeddings", help="dump a cache as CSV")
    p.add_argument("--embeddings", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_export)

    return parser


def main(argv: Optional[list[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except NoFaceFound as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_NO_FACE
    except ModelLoadFailure as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_MODEL
    except (
        MalformedRow,
        DuplicateId,
        MissingImage,
        EmptyDataset,
        CacheIntegrityError,
        IncompatibleCheckpoint,
    ) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_DATA
    except RegGapError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_GENERIC
    except (ValueError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_GENERIC


if __name__ == "__main__":
    sys.exit(main())
