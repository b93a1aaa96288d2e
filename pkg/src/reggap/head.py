"""Two-hidden-layer regression head mapping embeddings to scalar BMI.

Architecture: C -> 512 (ReLU) -> dropout -> 256 (ReLU) -> 1 (linear).
Trained with mean-squared error and Adam; after every optimizer step the
incoming-weight row of each hidden neuron is projected back to the max
norm. Dropout is inverted (activations scaled by 1/(1-rate) at train
time) so inference needs no scaling.

The default Adam epsilon of 0.48 is intentional but anomalous (standard
is 1e-8): it reproduces the published training configuration and is
overridable via HeadConfig.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import (
    DimensionMismatch,
    EmptyDataset,
    IncompatibleCheckpoint,
    NonFiniteLoss,
)
from .types import Embedding

CHECKPOINT_MAGIC = b"RGH1"

#: Serialization / iteration order of the parameter tensors.
PARAM_FIELDS = ("w1", "b1", "w2", "b2", "w3", "b3")


@dataclass(frozen=True)
class HeadConfig:
    """Hyperparameters of the regression head and its optimizer."""

    input_dim: int
    hidden1: int = 512
    hidden2: int = 256
    dropout_rate: float = 0.4
    max_norm: float = 5.0
    learning_rate: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 0.48
    decay: float = 0.0
    batch_size: int = 32
    epochs: int = 100
    seed: int = 0

    def __post_init__(self):
        if self.input_dim < 1 or self.hidden1 < 1 or self.hidden2 < 1:
            raise ValueError("layer sizes must be positive")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError(f"dropout_rate must be in [0, 1), got {self.dropout_rate}")
        if self.max_norm <= 0:
            raise ValueError(f"max_norm must be > 0, got {self.max_norm}")
        if self.batch_size < 1 or self.epochs < 1:
            raise ValueError("batch_size and epochs must be positive")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")


@dataclass
class HeadParams:
    """Weights, biases, Adam moments and the step counter."""

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    w3: np.ndarray
    b3: np.ndarray
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0

    @property
    def input_dim(self) -> int:
        return self.w1.shape[1]

    def tensors(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in PARAM_FIELDS}


def init_head(config: HeadConfig) -> HeadParams:
    """Uniform fan-based init (bounded, deterministic given the seed)."""
    rng = np.random.default_rng(config.seed)

    def glorot(rows: int, cols: int) -> np.ndarray:
        limit = np.sqrt(6.0 / (rows + cols))
        return rng.uniform(-limit, limit, size=(rows, cols))

    params = HeadParams(
        w1=glorot(config.hidden1, config.input_dim),
        b1=np.zeros(config.hidden1),
        w2=glorot(config.hidden2, config.hidden1),
        b2=np.zeros(config.hidden2),
        w3=glorot(1, config.hidden2),
        b3=np.zeros(1),
    )
    for name, tensor in params.tensors().items():
        params.m[name] = np.zeros_like(tensor)
        params.v[name] = np.zeros_like(tensor)
    return params


def _as_matrix(x, input_dim: int) -> np.ndarray:
    if isinstance(x, Embedding):
        x = x.values
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != input_dim:
        raise DimensionMismatch(
            f"embedding has shape {x.shape}, head expects dim {input_dim}"
        )
    return x


def _forward_batch(
    params: HeadParams,
    x: np.ndarray,
    training: bool,
    dropout_rng: Optional[np.random.Generator],
    dropout_rate: float,
) -> tuple[np.ndarray, dict[str, np.ndarray]]:
    """Forward pass keeping the intermediates needed for backprop."""
    z1 = x @ params.w1.T + params.b1
    a1 = np.maximum(z1, 0.0)
    if training and dropout_rate > 0.0:
        if dropout_rng is None:
            raise ValueError("training-mode forward needs a dropout rng")
        keep = 1.0 - dropout_rate
        drop = (dropout_rng.random(a1.shape) < keep) / keep
    else:
        drop = np.ones_like(a1)
    a1d = a1 * drop
    z2 = a1d @ params.w2.T + params.b2
    a2 = np.maximum(z2, 0.0)
    pred = (a2 @ params.w3.T + params.b3)[:, 0]
    cache = {"x": x, "z1": z1, "drop": drop, "a1d": a1d, "z2": z2, "a2": a2}
    return pred, cache


def _backward(
    params: HeadParams,
    cache: dict[str, np.ndarray],
    pred: np.ndarray,
    y: np.ndarray,
) -> dict[str, np.ndarray]:
    """Gradients of mean((pred - y)^2) w.r.t. every parameter tensor."""
    n = y.shape[0]
    dpred = (2.0 / n) * (pred - y)
    grad_w3 = dpred[None, :] @ cache["a2"]
    grad_b3 = np.array([dpred.sum()])
    da2 = dpred[:, None] @ params.w3
    dz2 = da2 * (cache["z2"] > 0.0)
    grad_w2 = dz2.T @ cache["a1d"]
    grad_b2 = dz2.sum(axis=0)
    da1 = (dz2 @ params.w2) * cache["drop"]
    dz1 = da1 * (cache["z1"] > 0.0)
    grad_w1 = dz1.T @ cache["x"]
    grad_b1 = dz1.sum(axis=0)
    return {
        "w1": grad_w1, "b1": grad_b1,
        "w2": grad_w2, "b2": grad_b2,
        "w3": grad_w3, "b3": grad_b3,
    }


def forward(
    params: HeadParams,
    x,
    training: bool = False,
    dropout_rng: Optional[np.random.Generator] = None,
    dropout_rate: float = 0.4,
) -> float:
    """Predict one BMI value; deterministic when ``training`` is False."""
    matrix = _as_matrix(x, params.input_dim)
    pred, _ = _forward_batch(params, matrix, training, dropout_rng, dropout_rate)
    return float(pred[0])


def predict(params: HeadParams, embeddings: Sequence) -> list[float]:
    """Inference-mode forward per embedding, order preserving.

    Samples are evaluated one at a time so equal embeddings map to
    bitwise-equal predictions (batched GEMM kernels round rows
    differently depending on their position).
    """
    return [forward(params, e) for e in embeddings]


def _adam_step(params: HeadParams, grads: dict[str, np.ndarray], config: HeadConfig) -> None:
    params.step += 1
    t = params.step
    lr = config.learning_rate / (1.0 + config.decay * (t - 1))
    alpha = lr * np.sqrt(1.0 - config.beta2**t) / (1.0 - config.beta1**t)
    for name, tensor in params.tensors().items():
        g = grads[name]
        params.m[name] = config.beta1 * params.m[name] + (1.0 - config.beta1) * g
        params.v[name] = config.beta2 * params.v[name] + (1.0 - config.beta2) * g * g
        tensor -= alpha * params.m[name] / (np.sqrt(params.v[name]) + config.epsilon)


def apply_max_norm(params: HeadParams, max_norm: float) -> None:
    """Rescale any hidden-layer row whose Euclidean norm exceeds the bound."""
    for w in (params.w1, params.w2):
        norms = np.linalg.norm(w, axis=1)
        over = norms > max_norm
        if np.any(over):
            w[over] *= (max_norm / norms[over])[:, None]


def train_epoch(
    params: HeadParams,
    dataset: Sequence[tuple],
    config: HeadConfig,
    epoch: int,
    on_batch_end: Optional[Callable[[HeadParams], None]] = None,
) -> tuple[HeadParams, float]:
    """One pass over ``dataset`` (pairs of embedding, bmi); returns mean MSE.

    Shuffling and dropout draw from a generator seeded with
    ``config.seed + epoch`` so runs are reproducible batch for batch.
    ``on_batch_end`` fires after each optimizer step (post projection).
    """
    if len(dataset) == 0:
        raise EmptyDataset("train_epoch called with no samples")
    x = np.vstack([_as_matrix(e, params.input_dim) for e, _ in dataset])
    y = np.asarray([float(b) for _, b in dataset], dtype=np.float64)
    rng = np.random.default_rng(config.seed + epoch)
    order = rng.permutation(len(dataset))
    total = 0.0
    for lo in range(0, len(order), config.batch_size):
        idx = order[lo : lo + config.batch_size]
        pred, cache = _forward_batch(params, x[idx], True, rng, config.dropout_rate)
        residual = pred - y[idx]
        loss = float(np.mean(residual * residual))
        if not np.isfinite(loss):
            raise NonFiniteLoss(
                f"epoch {epoch}, batch at {lo}: loss={loss}, "
                f"|pred|max={np.abs(pred).max():.3e}"
            )
        grads = _backward(params, cache, pred, y[idx])
        _adam_step(params, grads, config)
        apply_max_norm(params, config.max_norm)
        if on_batch_end is not None:
            on_batch_end(params)
        total += loss * len(idx)
    return params, total / len(order)


def fit(
    params: HeadParams,
    dataset: Sequence[tuple],
    config: HeadConfig,
    on_epoch_end: Optional[Callable[[int, float], None]] = None,
) -> tuple[HeadParams, list[float]]:
    """Run ``config.epochs`` training epochs, returning the loss history."""
    history = []
    for epoch in range(config.epochs):
        params, loss = train_epoch(params, dataset, config, epoch)
        history.append(loss)
        if on_epoch_end is not None:
            on_epoch_end(epoch, loss)
    return params, history


def gradient_check(
    params: HeadParams,
    sample: tuple,
    n_checks: int = 200,
    step: float = 1e-5,
    seed: int = 0,
) -> float:
    """Max relative error between analytic and central-difference grads.

    Dropout is disabled. Relative error uses max(|a|, |n|, 1e-8) as the
    denominator so exactly-zero pairs (dead ReLU paths) compare as 0.
    """
    x = _as_matrix(sample[0], params.input_dim)
    y = np.asarray([float(sample[1])], dtype=np.float64)

    def loss() -> float:
        pred, _ = _forward_batch(params, x, False, None, 0.0)
        r = pred - y
        return float(np.mean(r * r))

    pred, cache = _forward_batch(params, x, False, None, 0.0)
    analytic = _backward(params, cache, pred, y)

    rng = np.random.default_rng(seed)
    flat_sizes = [(name, getattr(params, name).size) for name in PARAM_FIELDS]
    total_size = sum(s for _, s in flat_sizes)
    chosen = rng.choice(total_size, size=min(n_checks, total_size), replace=False)

    worst = 0.0
    for global_idx in chosen:
        offset = int(global_idx)
        for name, size in flat_sizes:
            if offset < size:
                break
            offset -= size
        tensor = getattr(params, name)
        original = tensor.flat[offset]
        tensor.flat[offset] = original + step
        up = loss()
        tensor.flat[offset] = original - step
        down = loss()
        tensor.flat[offset] = original
        numeric = (up - down) / (2.0 * step)
        a = float(analytic[name].flat[offset])
        rel = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
        worst = max(worst, rel)
    return worst


def save_checkpoint(
    path: str | Path,
    params: HeadParams,
    config: HeadConfig,
    metadata: Optional[dict] = None,
) -> None:
    """Write the RGH1 binary plus a JSON sidecar at ``<path>.meta.json``.

    Binary layout: magic, uint32 LE input dim, every parameter tensor in
    fixed order as float64 LE, then first and second moments in the same
    order, then the uint64 LE step counter.
    """
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", params.input_dim))
        for name in PARAM_FIELDS:
            fh.write(getattr(params, name).astype("<f8").tobytes())
        for moments in (params.m, params.v):
            for name in PARAM_FIELDS:
                fh.write(moments[name].astype("<f8").tobytes())
        fh.write(struct.pack("<Q", params.step))
    sidecar = {"format": "RGH1", "config": asdict(config)}
    sidecar.update(metadata or {})
    sidecar_path = path.with_name(path.name + ".meta.json")
    sidecar_path.write_text(json.dumps(sidecar, indent=2, sort_keys=True) + "\n")


def load_checkpoint(path: str | Path) -> tuple[HeadParams, HeadConfig, dict]:
    """Read a checkpoint and its sidecar; validates layout and length."""
    path = Path(path)
    sidecar_path = path.with_name(path.name + ".meta.json")
    if not path.exists() or not sidecar_path.exists():
        raise IncompatibleCheckpoint(f"missing checkpoint or sidecar for {path}")
    sidecar = json.loads(sidecar_path.read_text())
    config = HeadConfig(**sidecar["config"])
    blob = path.read_bytes()
    if blob[:4] != CHECKPOINT_MAGIC:
        raise IncompatibleCheckpoint(f"{path} is not an RGH1 checkpoint")
    (input_dim,) = struct.unpack("<I", blob[4:8])
    if input_dim != config.input_dim:
        raise IncompatibleCheckpoint(
            f"binary input dim {input_dim} != sidecar {config.input_dim}"
        )
    shapes = {
        "w1": (config.hidden1, config.input_dim),
        "b1": (config.hidden1,),
        "w2": (config.hidden2, config.hidden1),
        "b2": (config.hidden2,),
        "w3": (1, config.hidden2),
        "b3": (1,),
    }
    n_values = sum(int(np.prod(s)) for s in shapes.values())
    expected = 8 + 3 * 8 * n_values + 8
    if len(blob) != expected:
        raise IncompatibleCheckpoint(
            f"{path}: expected {expected} bytes, got {len(blob)}"
        )

    offset = 8

    def take(shape: tuple[int, ...]) -> np.ndarray:
        nonlocal offset
        count = int(np.prod(shape))
        arr = np.frombuffer(blob, dtype="<f8", count=count, offset=offset)
        offset += 8 * count
        return arr.reshape(shape).copy()

    tensors = {name: take(shape) for name, shape in shapes.items()}
    m = {name: take(shapes[name]) for name in PARAM_FIELDS}
    v = {name: take(shapes[name]) for name in PARAM_FIELDS}
    (step,) = struct.unpack("<Q", blob[offset : offset + 8])
    params = HeadParams(**tensors, m=m, v=v, step=step)
    return params, config, {k: v for k, v in sidecar.items() if k not in ("format", "config")}
