"""Acceptance gate: every criterion at its stated tolerance.

Each test prints one ``[PASS]``/``[FAIL]`` line (run with ``pytest -s``
to watch them stream). All tolerances are pinned here, not configurable.
"""

import time
from pathlib import Path

import numpy as np
import scipy.stats

from reggap.cli import main as cli_main
from reggap.data import (
    SyntheticSpec,
    generate_synthetic,
    load_image,
    random_split,
    synthetic_label_map,
)
from reggap.head import HeadConfig, fit, gradient_check, init_head, predict, train_epoch
from reggap.interpolate import ResizeSpec, resize_biquartic
from reggap.metrics import BmiClass, class_bin, mae, paired_t_test, pearson, rmse
from reggap.pooling import gap, reg_gap, region_pool
from reggap.segmentation import label_map_to_masks
from reggap.types import CANONICAL_REGIONS, FeatureMap, RegionId, RegionMaskSet

README = Path(__file__).resolve().parent.parent / "README.md"


def report(number, description, ok):
    print(f"[{'PASS' if ok else 'FAIL'}] criterion {number}: {description}")
    assert ok, f"criterion {number} failed: {description}"


def brute_force_reg_gap(data, mask_arrays):
    h, w, c = data.shape
    out = np.zeros(c)
    for mask in mask_arrays:
        support = 0
        acc = [0.0] * c
        for i in range(h):
            for j in range(w):
                if mask[i, j]:
                    support += 1
                    for k in range(c):
                        acc[k] += data[i, j, k]
        if support > 0:
            for k in range(c):
                out[k] += acc[k] / support
    return out / len(mask_arrays)


def test_criterion_1_pooling_oracle_equivalence():
    start = time.time()
    rng = np.random.default_rng(1001)
    worst = 0.0
    for _ in range(1000):
        h, w = (int(v) for v in rng.integers(1, 9, size=2))
        c = int(rng.integers(1, 5))
        data = rng.normal(size=(h, w, c))
        assignment = rng.integers(0, 9, size=(h, w))
        arrays = [(assignment == int(r)).astype(np.uint8) for r in CANONICAL_REGIONS]
        masks = RegionMaskSet(dict(zip(CANONICAL_REGIONS, arrays)))
        got = reg_gap(FeatureMap(data), masks).values
        want = brute_force_reg_gap(data, arrays)
        worst = max(worst, float(np.max(np.abs(got - want))))
    full_ok = True
    for _ in range(50):
        h, w = (int(v) for v in rng.integers(1, 9, size=2))
        c = int(rng.integers(1, 5))
        fmap = FeatureMap(rng.normal(size=(h, w, c)))
        pooled = region_pool(fmap, np.ones((h, w), dtype=np.uint8), RegionId.SKIN)
        full_ok = full_ok and np.array_equal(pooled.values, gap(fmap).values)
    elapsed = time.time() - start
    report(
        1,
        f"reg_gap vs brute force |err|max={worst:.2e} (<=1e-10), "
        f"full-mask==gap exact={full_ok}, {elapsed:.1f}s (<10s)",
        worst <= 1e-10 and full_ok and elapsed < 10.0,
    )


def test_criterion_2_interpolation_exactness():
    start = time.time()
    rng = np.random.default_rng(1002)
    poly = np.polynomial.polynomial.Polynomial
    worst_rel = 0.0
    for _ in range(100):
        source = int(rng.integers(5, 13))
        target = int(rng.integers(1, 34))
        dx = int(rng.integers(0, 5))
        dy = int(rng.integers(0, 5))
        px = poly(rng.normal(size=dx + 1))
        py = poly(rng.normal(size=dy + 1))
        grid = np.outer(py(np.arange(source)), px(np.arange(source)))
        out = resize_biquartic(
            FeatureMap(grid[:, :, None]), ResizeSpec(target, target)
        ).data[:, :, 0]
        if target == 1:
            xs = np.array([(source - 1) / 2.0])
        else:
            xs = np.arange(target) * (source - 1) / (target - 1)
        expected = np.outer(py(xs), px(xs))
        scale = max(float(np.max(np.abs(expected))), 1e-12)
        worst_rel = max(worst_rel, float(np.max(np.abs(out - expected))) / scale)
    identity_ok = True
    for _ in range(20):
        h, w = (int(v) for v in rng.integers(1, 12, size=2))
        data = rng.normal(size=(h, w, 2))
        out = resize_biquartic(FeatureMap(data), ResizeSpec(h, w)).data
        identity_ok = identity_ok and bool(np.max(np.abs(out - data), initial=0.0) <= 1e-12)
    elapsed = time.time() - start
    report(
        2,
        f"poly reproduction rel err={worst_rel:.2e} (<=1e-9), "
        f"identity<=1e-12={identity_ok}, {elapsed:.1f}s (<10s)",
        worst_rel <= 1e-9 and identity_ok and elapsed < 10.0,
    )


def test_criterion_3_gradient_correctness():
    start = time.time()
    worst = 0.0
    for seed in range(20):
        rng = np.random.default_rng(2000 + seed)
        config = HeadConfig(input_dim=16, seed=seed, dropout_rate=0.0)
        params = init_head(config)
        sample = (rng.normal(size=16), float(rng.normal()))
        worst = max(worst, gradient_check(params, sample, seed=seed))
    elapsed = time.time() - start
    report(
        3,
        f"gradient check max rel err={worst:.2e} (<1e-4) over 20 seeds, "
        f"{elapsed:.1f}s (<30s)",
        worst < 1e-4 and elapsed < 30.0,
    )


def test_criterion_4_max_norm_invariant(tmp_path):
    spec = SyntheticSpec(n=64, noise_std=0.3, seed=4)
    manifest = generate_synthetic(spec, tmp_path / "data")
    masks = label_map_to_masks(synthetic_label_map(32))
    dataset = [
        (reg_gap(FeatureMap(load_image(r.image_ref)), masks).values, r.bmi)
        for r in manifest.records
    ]
    config = HeadConfig(input_dim=3, seed=4, batch_size=16, epochs=50)
    params = init_head(config)
    worst = 0.0

    def check(p):
        nonlocal worst
        for w in (p.w1, p.w2):
            worst = max(worst, float(np.linalg.norm(w, axis=1).max()))
        assert worst <= 5.0 + 1e-9

    for epoch in range(config.epochs):
        params, _ = train_epoch(params, dataset, config, epoch, on_batch_end=check)
    report(
        4,
        f"max row norm over 50 epochs, every batch: {worst:.12f} (<=5+1e-9)",
        worst <= 5.0 + 1e-9,
    )


def test_criterion_5_metric_identities():
    rng = np.random.default_rng(1005)
    ok_power_mean = True
    for _ in range(10_000):
        n = int(rng.integers(1, 12))
        truth = rng.normal(27, 7, size=n)
        pred = rng.normal(27, 7, size=n)
        if rmse(truth, pred) < mae(truth, pred) - 1e-12:
            ok_power_mean = False
            break
    ok_affine = True
    for _ in range(200):
        x = rng.normal(size=10)
        y = rng.normal(size=10)
        a = float(rng.uniform(0.1, 20.0))
        b = float(rng.uniform(-50.0, 50.0))
        base = pearson(x, y)
        ok_affine = ok_affine and abs(pearson(a * x + b, y) - base) <= 1e-12
        ok_affine = ok_affine and abs(pearson(-a * x + b, y) + base) <= 1e-12
    probes = {
        18.5: BmiClass.NORMAL,
        25.0: BmiClass.OVER_WEIGHT,
        30.0: BmiClass.OBESE,
        35.0: BmiClass.SEVERELY_OBESE,
        40.0: BmiClass.VERY_SEVERELY_OBESE,
    }
    ok_bins = all(class_bin(v) is cls for v, cls in probes.items())
    report(
        5,
        f"rmse>=mae on 10k vectors={ok_power_mean}, pearson affine "
        f"invariance<=1e-12={ok_affine}, class boundaries={ok_bins}",
        ok_power_mean and ok_affine and ok_bins,
    )


def test_criterion_6_desk_scale_reg_gap_beats_gap(tmp_path):
    start = time.time()
    spec = SyntheticSpec(n=256, signal_region=RegionId.NOSE, noise_std=0.3, seed=7)
    manifest = generate_synthetic(spec, tmp_path / "data")
    masks = label_map_to_masks(synthetic_label_map(32))
    nose_fraction = float(masks.masks[RegionId.NOSE].sum()) / (32 * 32)
    assert nose_fraction < 0.10

    features = [FeatureMap(load_image(r.image_ref)) for r in manifest.records]
    embeddings = {
        "reg_gap": [reg_gap(f, masks).values for f in features],
        "gap": [gap(f).values for f in features],
    }
    split = random_split(manifest, 0.78, seed=7)
    train_idx = [i for i, r in enumerate(split.records) if r.split == "train"]
    test_idx = [i for i, r in enumerate(split.records) if r.split == "test"]
    bmis = np.array([r.bmi for r in split.records])

    results = {}
    config = HeadConfig(input_dim=3, seed=7, batch_size=32, epochs=400)
    for name, vectors in embeddings.items():
        params = init_head(config)
        train_set = [(vectors[i], bmis[i]) for i in train_idx]
        params, _ = fit(params, train_set, config)
        pred = np.array(predict(params, [vectors[i] for i in test_idx]))
        truth = bmis[test_idx]
        results[name] = (mae(truth, pred), pearson(truth, pred))

    reg_mae, reg_r = results["reg_gap"]
    gap_mae, _ = results["gap"]
    ratio = reg_mae / gap_mae
    elapsed = time.time() - start
    report(
        6,
        f"RegGAP test pearson={reg_r:.3f} (>=0.90), mae={reg_mae:.3f} vs "
        f"GAP mae={gap_mae:.3f}, ratio={ratio:.3f} (<=0.8), "
        f"nose covers {nose_fraction:.1%} (<10%), {elapsed:.0f}s (<300s)",
        reg_r >= 0.90 and ratio <= 0.8 and elapsed < 300.0,
    )


def test_criterion_7_full_reproduction_is_documented_not_gated():
    text = README.read_text()
    has_section = "Reproducing the published numbers" in text
    has_targets = "5.03" in text and "1.73" in text
    report(
        7,
        "paper-number reproduction is a documented procedure (README), "
        f"targets listed={has_targets}; external assets required, not a CI gate",
        has_section and has_targets,
    )


def test_criterion_8_pipeline_determinism(tmp_path):
    def run_pipeline(root: Path) -> tuple[bytes, bytes]:
        data = root / "data"
        cache = root / "cache"
        argv_sets = [
            ["synth", "--out", str(data), "--n", "16", "--noise-std", "0.2",
             "--seed", "5"],
            ["segment", "--manifest", str(data / "manifest.csv"),
             "--masks-dir", str(data / "masks"), "--cache-dir", str(cache)],
            ["embed", "--manifest", str(data / "manifest.csv"),
             "--out", str(cache / "emb.rge"), "--cache-dir", str(cache),
             "--pooling", "reg_gap", "--seed", "5"],
            ["train", "--manifest", str(data / "manifest.csv"),
             "--embeddings", str(cache / "emb.rge"),
             "--out", str(root / "head.ckpt"), "--split", "random:0.78:5",
             "--epochs", "5", "--seed", "5"],
        ]
        for argv in argv_sets:
            assert cli_main(argv) == 0
        return (cache / "emb.rge").read_bytes(), (root / "head.ckpt").read_bytes()

    cache_a, head_a = run_pipeline(tmp_path / "run_a")
    cache_b, head_b = run_pipeline(tmp_path / "run_b")
    same_cache = cache_a == cache_b
    same_head = head_a == head_b
    report(
        8,
        f"two seeded pipeline runs: caches identical={same_cache}, "
        f"checkpoints identical={same_head}",
        same_cache and same_head,
    )


def test_criterion_9_significance_harness():
    rng = np.random.default_rng(1009)
    worst_t = worst_p = 0.0
    for _ in range(50):
        n = int(rng.integers(2, 60))
        a = rng.exponential(2.0, size=n)
        b = rng.exponential(2.0, size=n)
        if float(np.std(a - b, ddof=1)) == 0.0:
            continue
        got = paired_t_test(a, b)
        want = scipy.stats.ttest_rel(a, b)
        worst_t = max(worst_t, abs(got.t - float(want.statistic)))
        worst_p = max(worst_p, abs(got.p_value - float(want.pvalue)))
    identical = paired_t_test([0.5, 0.7, 0.9], [0.5, 0.7, 0.9])
    ok_identical = identical.p_value == 1.0 and identical.t == 0.0
    report(
        9,
        f"paired t vs scipy: |dt|max={worst_t:.2e}, |dp|max={worst_p:.2e} "
        f"(<=1e-8); identical inputs p=1: {ok_identical}",
        worst_t <= 1e-8 and worst_p <= 1e-8 and ok_identical,
    )
