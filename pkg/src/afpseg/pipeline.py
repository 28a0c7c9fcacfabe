"""Training orchestration, evaluation protocol, and single-image inference.

The pieces below tie the generator and the network together: produce (or
load) AFPD datasets, run seeded mini-batch training with a JSON-lines
metrics log and an AFPW checkpoint, accumulate pixel-level confusion
matrices, and run padded fully-convolutional inference on arbitrary-size
depth maps.
"""

from __future__ import annotations

import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from .dataset import Dataset, generate_dataset, normalize_depth
from .errors import ConfigurationError, DataError, ShapeError
from .net import (
    Network,
    NetworkConfig,
    apply_gradients,
    backward,
    crop_to,
    forward,
    forward_with_cache,
    init_optimizer,
    load_checkpoint,
    loss_and_grad,
    pad_to,
    save_checkpoint,
)
from .raster import CLASS_NAMES, NUM_CLASSES, read_depth_png
from .scene import GeneratorConfig, component_rng

__all__ = [
    "EvalReport",
    "TrainConfig",
    "TrainResult",
    "confusion_counts",
    "evaluate",
    "infer",
    "train",
]

# Stream tag for the epoch-shuffle generator (scene streams use 1..7,
# parameter init uses 101).
_STREAM_SHUFFLE = 201

# Validation scenes come from a disjoint seed range: per-sample seeds are
# base XOR index, so offsetting the base by 2^31 keeps the two streams
# from colliding for any base below 2^31.
_VAL_SEED_OFFSET = 2**31


# ---------------------------------------------------------------------------
# Training configuration
# ---------------------------------------------------------------------------


@dataclass
class TrainConfig:
    """Everything a training run needs, JSON round-trippable.

    ``train_data``/``val_data`` point at existing AFPD files; left unset,
    the datasets are generated into the output directory from
    ``generator`` with seeds ``seed`` (train) and ``seed + 2^31`` (val).
    """

    generator: GeneratorConfig = field(default_factory=GeneratorConfig.desk_scale)
    network: NetworkConfig = field(default_factory=NetworkConfig.desk_scale)
    optimizer: str = "adam"
    learning_rate: float = 1e-3
    epochs: int = 20
    batch_size: int = 8
    train_count: int = 500
    val_count: int = 100
    seed: int = 0
    early_stop_accuracy: float | None = None
    train_data: str | None = None
    val_data: str | None = None
    out_dir: str = "afpseg_run"

    def validate(self) -> None:
        self.generator.validate()
        self.network.validate()
        if self.optimizer not in ("sgd", "adam"):
            raise ConfigurationError(f"unknown optimizer {self.optimizer!r}")
        if not self.learning_rate > 0:
            raise ConfigurationError("learning_rate must be > 0")
        if self.epochs < 1:
            raise ConfigurationError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ConfigurationError("batch_size must be >= 1")
        if self.train_count < 1 or self.val_count < 1:
            raise ConfigurationError("train_count and val_count must be >= 1")
        if self.early_stop_accuracy is not None and not 0 < self.early_stop_accuracy <= 1:
            raise ConfigurationError("early_stop_accuracy must be in (0, 1]")

    def to_dict(self) -> dict:
        out = {}
        for f in fields(self):
            value = getattr(self, f.name)
            if f.name in ("generator", "network"):
                value = value.to_dict()
            out[f.name] = value
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        if not isinstance(data, dict):
            raise ConfigurationError("train config must be a JSON object")
        known = {f.name for f in cls.__dataclass_fields__.values()}
        unknown = set(data) - known
        if unknown:
            raise ConfigurationError(f"unknown train config keys: {sorted(unknown)}")
        kwargs = dict(data)
        if "generator" in kwargs:
            kwargs["generator"] = GeneratorConfig.from_dict(kwargs["generator"])
        if "network" in kwargs:
            kwargs["network"] = NetworkConfig.from_dict(kwargs["network"])
        config = cls(**kwargs)
        config.validate()
        return config

    @classmethod
    def from_json(cls, text: str) -> "TrainConfig":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"train config is not valid JSON: {exc}")
        return cls.from_dict(data)

    @classmethod
    def desk_scale(cls) -> "TrainConfig":
        """500/100 samples at 64x96 — finishes on a laptop CPU in minutes."""
        return cls()

    @classmethod
    def full_scale(cls) -> "TrainConfig":
        """5000/1000 samples at 200x300 — hours on a commodity CPU."""
        return cls(
            generator=GeneratorConfig.full_scale(),
            network=NetworkConfig.full_scale(),
            epochs=20,
            train_count=5000,
            val_count=1000,
        )


@dataclass
class TrainResult:
    """What a finished run produced, plus where the artifacts live."""

    checkpoint_path: str
    metrics_path: str
    curves_path: str | None
    history: list
    pre_val_loss: float
    pre_val_accuracy: float
    final_val_accuracy: float
    epochs_run: int
    network: Network


# ---------------------------------------------------------------------------
# Padded forward/backward helpers
# ---------------------------------------------------------------------------


def _padded_size(extent: int, divisor: int) -> int:
    return ((extent + divisor - 1) // divisor) * divisor


def _forward_padded(net: Network, batch: np.ndarray) -> np.ndarray:
    """Forward a (n,h,w,1) batch, zero-padding h/w to the network's divisor.

    Returns probabilities cropped back to the input extents.  Softmax acts
    per pixel, so cropping after the fact equals forwarding the unpadded
    image through a network that could accept it.
    """
    n, h, w, _ = batch.shape
    divisor = net.config.divisor
    hp, wp = _padded_size(h, divisor), _padded_size(w, divisor)
    if (hp, wp) != (h, w):
        batch = pad_to(batch, hp, wp)
    probs = forward(net, batch)
    if (hp, wp) != (h, w):
        probs = crop_to(probs, h, w)
    return probs


def _train_batch(net: Network, opt, batch: np.ndarray, labels: np.ndarray) -> float:
    """One optimizer step on a batch whose extents may need padding.

    The loss is taken over the original pixels only: padded logits are
    cropped before the softmax/loss, and the incoming gradient is
    re-embedded in a zero field for the backward pass (no label is
    invented for padding pixels).
    """
    n, h, w, _ = batch.shape
    divisor = net.config.divisor
    hp, wp = _padded_size(h, divisor), _padded_size(w, divisor)
    padded = (hp, wp) != (h, w)
    if padded:
        batch = pad_to(batch, hp, wp)
    probs, cache = forward_with_cache(net, batch)
    if padded:
        probs = crop_to(probs, h, w)
    loss, dlogits = loss_and_grad(probs, labels)
    if padded:
        dlogits = pad_to(dlogits, hp, wp)
    grads = backward(net, cache, dlogits)
    apply_gradients(opt, net.params, grads)
    return loss


def _load_batch(dataset: Dataset, indices) -> tuple[np.ndarray, np.ndarray]:
    xs, ys = [], []
    for i in indices:
        depth, labels = dataset[int(i)]
        xs.append(normalize_depth(depth).astype(np.float32))
        ys.append(labels)
    x = np.stack(xs)[..., np.newaxis]
    return x, np.stack(ys)


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------


def confusion_counts(predictions: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """4x4 pixel tally: rows are predicted classes, columns ground truth."""
    predictions = np.asarray(predictions)
    labels = np.asarray(labels)
    if predictions.shape != labels.shape:
        raise ShapeError(
            f"prediction shape {predictions.shape} != label shape {labels.shape}"
        )
    if labels.size and int(labels.max()) >= NUM_CLASSES:
        raise DataError(f"label id {int(labels.max())} out of range [0, {NUM_CLASSES})")
    if predictions.size and int(predictions.max()) >= NUM_CLASSES:
        raise DataError(
            f"predicted id {int(predictions.max())} out of range [0, {NUM_CLASSES})"
        )
    joint = predictions.astype(np.int64).ravel() * NUM_CLASSES + labels.astype(np.int64).ravel()
    return np.bincount(joint, minlength=NUM_CLASSES * NUM_CLASSES).reshape(
        NUM_CLASSES, NUM_CLASSES
    )


@dataclass
class EvalReport:
    """Pixel-level confusion tallies with Table-style percentage views."""

    counts: np.ndarray  # int64 (pred, truth)
    total_pixels: int

    @classmethod
    def from_counts(cls, counts: np.ndarray) -> "EvalReport":
        counts = np.asarray(counts, dtype=np.int64)
        if counts.shape != (NUM_CLASSES, NUM_CLASSES):
            raise ShapeError(f"confusion counts must be 4x4, got {counts.shape}")
        return cls(counts=counts, total_pixels=int(counts.sum()))

    @property
    def percent(self) -> np.ndarray:
        """Entries as percent of all pixels (prediction rows x truth cols)."""
        if self.total_pixels == 0:
            return np.zeros((NUM_CLASSES, NUM_CLASSES))
        return self.counts / self.total_pixels * 100.0

    @property
    def prediction_marginals(self) -> np.ndarray:
        return self.percent.sum(axis=1)

    @property
    def truth_marginals(self) -> np.ndarray:
        return self.percent.sum(axis=0)

    @property
    def accuracy(self) -> float:
        """Overall pixel accuracy in percent: the diagonal sum."""
        return float(np.trace(self.percent))

    def format_table(self) -> str:
        """Render the confusion matrix with two-decimal percentages.

        Prediction rows against ground-truth columns, marginal sums on the
        right and bottom, grand total in the corner.
        """
        names = [name.capitalize() for name in CLASS_NAMES]
        width = 10
        pct = self.percent
        lines = []
        header_span = width * (NUM_CLASSES + 1)
        lines.append(" " * 12 + "Ground truth".center(header_span))
        lines.append(
            "Prediction".ljust(12)
            + "".join(n.rjust(width) for n in names)
            + "Sum".rjust(width)
        )
        for i, name in enumerate(names):
            cells = "".join(f"{pct[i, j]:{width}.2f}" for j in range(NUM_CLASSES))
            lines.append(name.ljust(12) + cells + f"{pct[i].sum():{width}.2f}")
        bottom = "".join(f"{pct[:, j].sum():{width}.2f}" for j in range(NUM_CLASSES))
        lines.append("Sum".ljust(12) + bottom + f"{pct.sum():{width}.2f}")
        return "\n".join(lines)

    def to_dict(self) -> dict:
        return {
            "classes": list(CLASS_NAMES),
            "counts": self.counts.tolist(),
            "confusion_percent": self.percent.tolist(),
            "prediction_marginals": self.prediction_marginals.tolist(),
            "truth_marginals": self.truth_marginals.tolist(),
            "accuracy": self.accuracy,
            "total_pixels": self.total_pixels,
            "layout": "rows=prediction, columns=ground_truth, percent of total pixels",
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def _resolve_network(net) -> Network:
    if isinstance(net, Network):
        return net
    return load_checkpoint(net)


def _resolve_dataset(data) -> Dataset:
    if isinstance(data, Dataset):
        return data
    return Dataset(data)


def _predict_labels(net: Network, depth: np.ndarray) -> np.ndarray:
    """Normalize, pad, forward, crop, argmax (ties to the lowest id)."""
    x = normalize_depth(depth).astype(np.float32)[np.newaxis, :, :, np.newaxis]
    probs = _forward_padded(net, x)
    return np.argmax(probs[0], axis=-1).astype(np.uint8)


def evaluate(net, data, threads: int = 1) -> EvalReport:
    """Confusion report for a network over every sample of a dataset.

    ``net`` may be a Network or a checkpoint path; ``data`` a Dataset or
    an AFPD path.  Tallies are integer counts merged after the parallel
    map, so the result is independent of ``threads``.
    """
    network = _resolve_network(net)
    dataset = _resolve_dataset(data)

    def tally(index: int) -> np.ndarray:
        depth, labels = dataset[index]
        return confusion_counts(_predict_labels(network, depth), labels)

    counts = np.zeros((NUM_CLASSES, NUM_CLASSES), dtype=np.int64)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            for c in pool.map(tally, range(len(dataset))):
                counts += c
    else:
        for index in range(len(dataset)):
            counts += tally(index)
    return EvalReport.from_counts(counts)


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------


def _val_metrics(net: Network, dataset: Dataset) -> tuple[float, float]:
    """Mean loss and pixel accuracy over a dataset, no parameter updates."""
    total_loss = 0.0
    correct = 0
    pixels = 0
    for depth, labels in dataset:
        x = normalize_depth(depth).astype(np.float32)[np.newaxis, :, :, np.newaxis]
        probs = _forward_padded(net, x)
        loss, _ = loss_and_grad(probs, labels[np.newaxis])
        total_loss += loss
        pred = np.argmax(probs[0], axis=-1)
        correct += int((pred == labels).sum())
        pixels += labels.size
    n = max(len(dataset), 1)
    return total_loss / n, correct / max(pixels, 1)


def train(
    config: TrainConfig,
    out_dir: str | os.PathLike | None = None,
    threads: int = 1,
    progress=None,
) -> TrainResult:
    """Run a full training job and write its artifacts.

    Produces in the output directory: ``train.afpd``/``val.afpd`` (unless
    the config points at existing files), ``metrics.jsonl`` with one
    ``{"epoch", "train_loss", "val_accuracy"}`` object per epoch,
    ``checkpoint.afpw``, and ``curves.png``.  With a fixed seed and one
    thread the metrics log is bit-reproducible.

    ``progress``, if given, is called as ``progress(epoch, train_loss,
    val_accuracy)`` after every epoch.
    """
    config.validate()
    out = Path(out_dir) if out_dir is not None else Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)

    if config.train_data:
        train_ds = Dataset(config.train_data)
    else:
        train_ds = Dataset(
            generate_dataset(
                config.generator, config.train_count, config.seed,
                out / "train.afpd", threads=threads,
            )
        )
    if config.val_data:
        val_ds = Dataset(config.val_data)
    else:
        val_ds = Dataset(
            generate_dataset(
                config.generator, config.val_count, config.seed + _VAL_SEED_OFFSET,
                out / "val.afpd", threads=threads,
            )
        )

    net = Network(config.network, seed=config.seed)
    opt = init_optimizer(net, config.optimizer, config.learning_rate)
    shuffle_rng = component_rng(config.seed, _STREAM_SHUFFLE)

    pre_val_loss, pre_val_accuracy = _val_metrics(net, val_ds)

    history: list[dict] = []
    metrics_path = out / "metrics.jsonl"
    val_accuracy = pre_val_accuracy
    epochs_run = 0
    with open(metrics_path, "w") as log:
        for epoch in range(1, config.epochs + 1):
            order = shuffle_rng.permutation(len(train_ds))
            loss_sum = 0.0
            for start in range(0, len(order), config.batch_size):
                chunk = order[start : start + config.batch_size]
                x, labels = _load_batch(train_ds, chunk)
                batch_loss = _train_batch(net, opt, x, labels)
                if not math.isfinite(batch_loss):
                    raise RuntimeError(
                        f"training diverged: non-finite loss {batch_loss!r} at "
                        f"epoch {epoch}, samples {chunk[:4].tolist()}... — try a "
                        f"lower learning rate"
                    )
                loss_sum += batch_loss * len(chunk)
            train_loss = loss_sum / len(train_ds)
            _, val_accuracy = _val_metrics(net, val_ds)
            row = {
                "epoch": epoch,
                "train_loss": train_loss,
                "val_accuracy": val_accuracy,
            }
            history.append(row)
            log.write(json.dumps(row) + "\n")
            log.flush()
            epochs_run = epoch
            if progress is not None:
                progress(epoch, train_loss, val_accuracy)
            if (
                config.early_stop_accuracy is not None
                and val_accuracy >= config.early_stop_accuracy
            ):
                break

    checkpoint_path = out / "checkpoint.afpw"
    save_checkpoint(checkpoint_path, net)

    curves_path: str | None = None
    try:
        from .report import save_training_curves

        curves_path = str(out / "curves.png")
        save_training_curves(history, curves_path, pre_val_accuracy=pre_val_accuracy)
    except ImportError:  # matplotlib genuinely absent
        curves_path = None

    return TrainResult(
        checkpoint_path=str(checkpoint_path),
        metrics_path=str(metrics_path),
        curves_path=curves_path,
        history=history,
        pre_val_loss=pre_val_loss,
        pre_val_accuracy=pre_val_accuracy,
        final_val_accuracy=val_accuracy,
        epochs_run=epochs_run,
        network=net,
    )


# ---------------------------------------------------------------------------
# Inference
# ---------------------------------------------------------------------------


def infer(net, source, index: int = 0) -> np.ndarray:
    """Label map for one depth image; extents equal the input's.

    ``source`` may be a numpy depth array, an AFPD path (``index`` selects
    the sample), or a grayscale PNG path.  Inputs whose extents are not
    multiples of the network divisor are zero-padded for the forward pass
    and the label map cropped back.
    """
    network = _resolve_network(net)
    if isinstance(source, np.ndarray):
        depth = source
    else:
        path = os.fspath(source)
        with open(path, "rb") as fh:
            magic = fh.read(4)
        if magic == b"AFPD":
            depth, _ = Dataset(path)[index]
        else:
            depth = read_depth_png(path)
    depth = np.asarray(depth, dtype=np.float64)
    if depth.ndim != 2:
        raise ShapeError(f"depth input must be 2-D, got shape {depth.shape}")
    return _predict_labels(network, depth)
