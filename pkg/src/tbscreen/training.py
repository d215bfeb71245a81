"""Fine-tuning loop: binary cross-entropy on the TB probability and the
classic momentum SGD update

    v' = momentum * v - weight_decay * lr * w - lr * grad
    w' = w + v'

applied verbatim per parameter tensor. Default hyperparameters: batch 10,
20 epochs, learning rate 1e-4, momentum 0.9, weight decay 5e-4.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np
import torch

from .data import (
    AugmentationConfig,
    DatasetManifest,
    ImageTensor,
    SplitAssignment,
    augment,
    load_and_resize,
    rng_for,
)
from .models import ClassifierModel, save_checkpoint, to_input_batch

PROB_CLAMP = 1e-12


class TrainingAbortedError(RuntimeError):
    """Raised when a run hits non-finite numbers; the run directory keeps
    the last good checkpoint."""


@dataclass
class TrainConfig:
    batch_size: int = 10
    epochs: int = 20
    learning_rate: float = 0.0001
    momentum: float = 0.9
    weight_decay: float = 0.0005
    seed: int = 0
    freeze_policy: str = "none"  # none | backbone_frozen

    def __post_init__(self):
        if self.batch_size <= 0 or self.epochs < 0:
            raise ValueError("batch_size must be positive and epochs nonnegative")
        if self.learning_rate <= 0 or self.momentum <= 0 or self.weight_decay <= 0:
            raise ValueError("learning_rate, momentum and weight_decay must be positive")
        if self.freeze_policy not in ("none", "backbone_frozen"):
            raise ValueError(f"unknown freeze_policy {self.freeze_policy!r}")

    def content_hash(self) -> str:
        return hashlib.sha256(json.dumps(asdict(self), sort_keys=True).encode()).hexdigest()[:16]


def cross_entropy(p, y):
    """Binary cross-entropy on the probability of the true-class-1 (TB).

    p is clamped to [1e-12, 1 - 1e-12] so log never sees 0. Accepts
    scalars, numpy arrays or torch tensors; array inputs return the mean
    over examples (the mini-batch loss).
    """
    if isinstance(p, torch.Tensor):
        p = torch.clamp(p, PROB_CLAMP, 1.0 - PROB_CLAMP)
        y = y if isinstance(y, torch.Tensor) else torch.as_tensor(y, dtype=p.dtype)
        loss = -(y * torch.log(p) + (1.0 - y) * torch.log(1.0 - p))
        return loss.mean()
    p_arr = np.clip(np.asarray(p, dtype=np.float64), PROB_CLAMP, 1.0 - PROB_CLAMP)
    y_arr = np.asarray(y, dtype=np.float64)
    loss = -(y_arr * np.log(p_arr) + (1.0 - y_arr) * np.log(1.0 - p_arr))
    return float(np.mean(loss))


def sgd_momentum_step(velocity, weights, grad, lr, momentum=0.9, weight_decay=0.0005):
    """One momentum SGD update; returns (new_velocity, new_weights).

    Pure and elementwise, so it works identically on python floats, numpy
    arrays and torch tensors.
    """
    new_v = momentum * velocity - weight_decay * lr * weights - lr * grad
    return new_v, weights + new_v


@dataclass
class OptimizerState:
    """Momentum buffers congruent with the trainable weights."""

    velocities: list[torch.Tensor]
    iteration: int = 0

    @classmethod
    def zeros_like(cls, params: list[torch.Tensor]) -> "OptimizerState":
        return cls(velocities=[torch.zeros_like(p) for p in params], iteration=0)


def apply_update(state: OptimizerState, params: list[torch.Tensor], config: TrainConfig) -> None:
    """Apply one update step to every trainable parameter in place."""
    with torch.no_grad():
        for i, p in enumerate(params):
            if p.grad is None:
                continue
            if not torch.isfinite(p.grad).all():
                raise TrainingAbortedError(
                    f"non-finite gradient in parameter {i} at iteration {state.iteration}"
                )
            new_v, new_w = sgd_momentum_step(
                state.velocities[i], p, p.grad, config.learning_rate, config.momentum, config.weight_decay
            )
            state.velocities[i] = new_v
            p.copy_(new_w)
    state.iteration += 1


@dataclass
class TrainingRun:
    per_epoch: list[dict] = field(default_factory=list)
    best_epoch: int = 0
    best_checkpoint: str = ""
    run_dir: str = ""

    @property
    def best_val_accuracy(self) -> float | None:
        if not self.per_epoch:
            return None
        return max(e["val_accuracy"] for e in self.per_epoch)


class _ImageCache:
    """Decoded+resized unit tensors, keyed by record id. Shenzhen-scale
    datasets fit comfortably (662 * 224*224*3 float32 ~ 0.4 GB)."""

    def __init__(self, manifest: DatasetManifest, target: tuple[int, int], enabled: bool = True):
        self.records = manifest.by_id()
        self.target = target
        self.enabled = enabled
        self._store: dict[str, ImageTensor] = {}

    def get(self, record_id: str) -> ImageTensor:
        if record_id in self._store:
            return self._store[record_id]
        image = load_and_resize(self.records[record_id], self.target)
        if self.enabled:
            self._store[record_id] = image
        return image


def _label_of(manifest_index, record_id: str) -> int:
    return 1 if manifest_index[record_id].label == "tb" else 0


def validate(model: ClassifierModel, manifest: DatasetManifest, ids: list[str], cache: _ImageCache | None = None, batch_size: int = 32) -> float:
    """Fraction of images whose argmax class matches the label; images are
    never augmented here."""
    if not ids:
        raise ValueError("validate requires a non-empty id set")
    cache = cache or _ImageCache(manifest, model.spec.input_dims)
    index = manifest.by_id()
    correct = 0
    model.net.eval()
    with torch.no_grad():
        for start in range(0, len(ids), batch_size):
            chunk = ids[start : start + batch_size]
            x = to_input_batch([cache.get(i) for i in chunk], model.spec)
            pred = torch.argmax(model.net(x), dim=1).numpy()
            labels = np.array([_label_of(index, i) for i in chunk])
            correct += int(np.sum(pred == labels))
    return correct / len(ids)


def train(
    model: ClassifierModel,
    manifest: DatasetManifest,
    split: SplitAssignment,
    config: TrainConfig,
    aug: AugmentationConfig | None = None,
    run_dir: str | Path = "runs/default",
    checkpoint_policy: str = "all",  # all | best
    cache_images: bool = True,
) -> TrainingRun:
    """Fine-tune on the train split, track validation accuracy per epoch,
    persist per-epoch checkpoints plus the best one.

    Each epoch reshuffles the train split (seeded), augments training
    batches only, and evaluates un-augmented validation images. The best
    checkpoint is the highest validation accuracy; ties keep the earliest
    epoch.
    """
    if checkpoint_policy not in ("all", "best"):
        raise ValueError(f"unknown checkpoint_policy {checkpoint_policy!r}")
    aug = aug or AugmentationConfig()
    train_ids = split.ids_for("train")
    val_ids = split.ids_for("val")
    index = manifest.by_id()
    missing = [i for i in train_ids + val_ids if i not in index]
    if missing:
        raise ValueError(f"split references ids absent from the manifest: {missing[:5]}")
    if not train_ids or not val_ids:
        raise ValueError("train and val splits must be non-empty")
    aug.validate_for_dims(model.spec.input_dims)

    run_dir = Path(run_dir)
    ckpt_dir = run_dir / "checkpoints"
    ckpt_dir.mkdir(parents=True, exist_ok=True)
    config_payload = {
        "train": asdict(config),
        "augmentation": asdict(aug),
        "backbone": model.spec.name,
        "weights_origin": model.weights_origin,
        "split_hash": split.content_hash(),
        "checkpoint_policy": checkpoint_policy,
    }
    with open(run_dir / "config.json", "w") as fh:
        json.dump(config_payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    cfg_hash = config.content_hash()

    torch.manual_seed(config.seed)
    cache = _ImageCache(manifest, model.spec.input_dims, enabled=cache_images)

    if config.freeze_policy == "backbone_frozen":
        trainable = list(model.head().parameters())
        for p in model.backbone_parameters():
            p.requires_grad_(False)
    else:
        trainable = [p for p in model.net.parameters() if p.requires_grad]

    state = OptimizerState.zeros_like(trainable)
    best_path = ckpt_dir / "best.pt"
    run = TrainingRun(run_dir=str(run_dir), best_checkpoint=str(best_path))
    metrics_path = run_dir / "metrics.jsonl"
    metrics_fh = open(metrics_path, "w")

    # retained for crash recovery: state at the last completed epoch
    last_good = {k: v.detach().clone() for k, v in model.net.state_dict().items()}
    best_acc = -1.0

    if config.epochs == 0:
        save_checkpoint(model, best_path, cfg_hash, epoch=0, val_accuracy=None)
        metrics_fh.close()
        return run

    try:
        for epoch in range(1, config.epochs + 1):
            shuffle_rng = np.random.default_rng(np.random.SeedSequence([config.seed, 1000 + epoch]))
            order = list(train_ids)
            shuffle_rng.shuffle(order)

            model.net.train()
            losses = []
            for start in range(0, len(order), config.batch_size):
                chunk = order[start : start + config.batch_size]
                images = []
                for rid in chunk:
                    base = cache.get(rid)
                    images.append(augment(base, aug, rng_for(aug.seed, rid, epoch)))
                x = to_input_batch(images, model.spec)
                y = torch.tensor([_label_of(index, i) for i in chunk], dtype=torch.float32)

                model.net.zero_grad(set_to_none=True)
                logits = model.net(x)
                p_tb = torch.softmax(logits, dim=1)[:, 1]
                loss = cross_entropy(p_tb, y)
                if not torch.isfinite(loss):
                    raise TrainingAbortedError(
                        f"non-finite loss at epoch {epoch}, batch {start // config.batch_size}"
                    )
                loss.backward()
                apply_update(state, trainable, config)
                losses.append(float(loss.detach()))

            val_acc = validate(model, manifest, val_ids, cache)
            entry = {"epoch": epoch, "mean_train_loss": float(np.mean(losses)), "val_accuracy": val_acc}
            run.per_epoch.append(entry)
            metrics_fh.write(json.dumps(entry, sort_keys=True) + "\n")
            metrics_fh.flush()

            if checkpoint_policy == "all":
                save_checkpoint(model, ckpt_dir / f"epoch-{epoch:03d}.pt", cfg_hash, epoch, val_acc)
            if val_acc > best_acc:
                best_acc = val_acc
                run.best_epoch = epoch
                save_checkpoint(model, best_path, cfg_hash, epoch, val_acc)
            last_good = {k: v.detach().clone() for k, v in model.net.state_dict().items()}
    except TrainingAbortedError:
        if best_acc < 0:  # no epoch completed; retain the pre-failure state
            model.net.load_state_dict(last_good)
            save_checkpoint(model, best_path, cfg_hash, epoch=0, val_accuracy=None)
        metrics_fh.close()
        raise
    metrics_fh.close()
    model.net.eval()
    model.weights_origin = "finetuned"
    return run


def scores_for_split(
    model: ClassifierModel,
    manifest: DatasetManifest,
    ids: list[str],
    batch_size: int = 32,
) -> tuple[list[str], list[int], list[float]]:
    """TB probabilities for a set of ids (no augmentation)."""
    from .models import predict_batch

    index = manifest.by_id()
    cache = _ImageCache(manifest, model.spec.input_dims, enabled=False)
    labels = [_label_of(index, i) for i in ids]
    scores: list[float] = []
    for start in range(0, len(ids), batch_size):
        chunk = ids[start : start + batch_size]
        probs = predict_batch(model, [cache.get(i) for i in chunk])
        scores.extend(float(p[1]) for p in probs)
    return list(ids), labels, scores
