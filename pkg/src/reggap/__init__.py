"""reggap: region-aware global average pooling for face-to-BMI regression.

The library covers the whole pipeline: face parsing adapters, mask
handling, bi-quartic grid alignment, GAP / Reg-GAP pooling, the MLP
regression head, metrics and significance testing, dataset manifests,
and a synthetic-data harness. See the ``reggap`` CLI for the staged
batch workflow.
"""

from .backbones import (
    BackboneSpec,
    FaceBox,
    IdentityBackbone,
    aligned_features,
    detect_face,
    extract_features,
    get_backbone_spec,
)
from .data import (
    Manifest,
    Preassigned,
    RandomFraction,
    SequentialFirstK,
    SyntheticSpec,
    generate_synthetic,
    load_manifest,
    random_split,
)
from .head import (
    HeadConfig,
    HeadParams,
    fit,
    forward,
    gradient_check,
    init_head,
    predict,
    train_epoch,
)
from .interpolate import ResizeSpec, resize_biquartic, resize_mask
from .metrics import (
    BmiClass,
    EvalReport,
    build_report,
    class_bin,
    mae,
    paired_t_test,
    pearson,
    rmse,
)
from .pooling import RegionVector, gap, reg_gap, region_pool
from .segmentation import (
    CELEBAMASK_HQ_VOCABULARY,
    collapse_labels,
    label_map_to_masks,
    parse_face,
)
from .types import (
    BmiRecord,
    Embedding,
    FeatureMap,
    LabelMap,
    PoolKind,
    RegionId,
    RegionMaskSet,
    validate_feature_map,
    validate_mask_set,
)

__version__ = "0.1.0"

__all__ = [
    "BackboneSpec",
    "BmiClass",
    "BmiRecord",
    "CELEBAMASK_HQ_VOCABULARY",
    "Embedding",
    "EvalReport",
    "FaceBox",
    "FeatureMap",
    "HeadConfig",
    "HeadParams",
    "IdentityBackbone",
    "LabelMap",
    "Manifest",
    "PoolKind",
    "Preassigned",
    "RandomFraction",
    "RegionId",
    "RegionMaskSet",
    "RegionVector",
    "ResizeSpec",
    "SequentialFirstK",
    "SyntheticSpec",
    "aligned_features",
    "build_report",
    "class_bin",
    "collapse_labels",
    "detect_face",
    "extract_features",
    "fit",
    "forward",
    "gap",
    "generate_synthetic",
    "get_backbone_spec",
    "gradient_check",
    "init_head",
    "label_map_to_masks",
    "load_manifest",
    "mae",
    "paired_t_test",
    "parse_face",
    "pearson",
    "predict",
    "random_split",
    "reg_gap",
    "region_pool",
    "resize_biquartic",
    "resize_mask",
    "rmse",
    "train_epoch",
    "validate_feature_map",
    "validate_mask_set",
]
