"""Fixed-feature baseline: pretrained backbones as feature extractors,
classified by a standardized linear max-margin model (the comparison arm
against end-to-end fine-tuning)."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
from sklearn.pipeline import Pipeline
from sklearn.preprocessing import StandardScaler
from sklearn.svm import LinearSVC

from .data import DatasetManifest, ImageTensor, load_and_resize
from .models import ClassifierModel, to_input_batch


@dataclass
class FeatureMatrix:
    ids: list[str]
    values: np.ndarray  # one row per id, fixed feature dim

    def __post_init__(self):
        if self.values.ndim != 2:
            raise ValueError(f"expected a 2-d feature matrix, got shape {self.values.shape}")
        if len(self.ids) != self.values.shape[0]:
            raise ValueError("row count must match the id list")
        if self.values.size and not np.all(np.isfinite(self.values)):
            raise ValueError("features must be finite")

    @property
    def dims(self) -> int:
        return self.values.shape[1]

    def id_list_hash(self) -> str:
        return hashlib.sha256("\n".join(self.ids).encode()).hexdigest()


def extract_features(
    model: ClassifierModel,
    images: Sequence[ImageTensor],
    ids: Sequence[str] | None = None,
    batch_size: int = 32,
) -> FeatureMatrix:
    """Penultimate-layer features (fc7 for AlexNet, pooled channels for
    the others); inference only, model weights untouched."""
    ids = list(ids) if ids is not None else [str(i) for i in range(len(images))]
    if len(ids) != len(images):
        raise ValueError("ids and images must have equal length")
    spec = model.spec
    if not images:
        return FeatureMatrix(ids=[], values=np.empty((0, spec.feature_dim), dtype=np.float32))

    module = model.net.get_submodule(spec.feature_layer)
    captured: list[torch.Tensor] = []

    def hook(_mod, _inp, out):
        captured.append(out.detach())

    handle = module.register_forward_hook(hook)
    rows: list[np.ndarray] = []
    try:
        model.net.eval()
        with torch.no_grad():
            for start in range(0, len(images), batch_size):
                captured.clear()
                batch = list(images[start : start + batch_size])
                model.net(to_input_batch(batch, spec))
                feats = captured[0]
                rows.append(feats.reshape(feats.shape[0], -1).numpy().astype(np.float32))
    finally:
        handle.remove()
    values = np.concatenate(rows, axis=0)
    if values.shape[1] != spec.feature_dim:
        raise ValueError(
            f"feature width {values.shape[1]} does not match the declared dim {spec.feature_dim}"
        )
    return FeatureMatrix(ids=ids, values=values)


def features_for_split(
    model: ClassifierModel, manifest: DatasetManifest, ids: list[str], batch_size: int = 32
) -> tuple[FeatureMatrix, list[int]]:
    index = manifest.by_id()
    labels = [1 if index[i].label == "tb" else 0 for i in ids]
    rows: list[np.ndarray] = []
    for start in range(0, len(ids), batch_size):
        chunk = ids[start : start + batch_size]
        images = [load_and_resize(index[i], model.spec.input_dims) for i in chunk]
        rows.append(extract_features(model, images, chunk).values)
    values = np.concatenate(rows, axis=0) if rows else np.empty((0, model.spec.feature_dim), dtype=np.float32)
    return FeatureMatrix(ids=list(ids), values=values), labels


@dataclass
class BaselineClassifier:
    pipeline: Pipeline
    reg_strength: float
    seed: int

    def decision_scores(self, features: FeatureMatrix) -> np.ndarray:
        """Signed margins; positive favors TB. Use threshold 0.0."""
        return self.pipeline.decision_function(features.values)

    def predict(self, features: FeatureMatrix) -> np.ndarray:
        return (self.decision_scores(features) >= 0.0).astype(int)


def fit_linear_classifier(
    features: FeatureMatrix, labels: Sequence[int], reg_strength: float = 1.0, seed: int = 0
) -> BaselineClassifier:
    """Per-dimension standardization (train statistics only) followed by a
    linear max-margin classifier."""
    if reg_strength <= 0:
        raise ValueError("reg_strength must be positive")
    y = np.asarray(labels, dtype=int)
    if len(set(y.tolist())) < 2:
        raise ValueError("both classes must be present to fit the baseline classifier")
    pipeline = Pipeline(
        [
            ("scale", StandardScaler()),
            ("svm", LinearSVC(C=reg_strength, random_state=seed)),
        ]
    )
    pipeline.fit(features.values, y)
    return BaselineClassifier(pipeline=pipeline, reg_strength=reg_strength, seed=seed)


def evaluate_baseline(
    classifier: BaselineClassifier,
    features: FeatureMatrix,
    labels: Sequence[int],
    extra: dict | None = None,
) -> dict:
    """Route margins through the shared evaluator; scores are signed
    margins so the operating threshold is 0.0."""
    from . import metrics as M

    if features.values.shape[0] == 0:
        raise ValueError("test feature set must be non-empty")
    scores = classifier.decision_scores(features)
    info = {"approach": "feature_based", "score_kind": "margin"}
    if extra:
        info.update(extra)
    return M.evaluation_report(scores, list(labels), threshold=0.0, approach="feature_based", extra=info)


# ---------------------------------------------------------------------------
# feature cache: binary matrix + JSON header


def save_features(path_base: str | Path, matrix: FeatureMatrix, backbone: str, layer: str) -> None:
    base = Path(path_base)
    np.save(base.with_suffix(".npy"), matrix.values)
    header = {
        "backbone": backbone,
        "layer": layer,
        "dims": matrix.dims,
        "n_rows": len(matrix.ids),
        "image_id_list_hash": matrix.id_list_hash(),
        "ids": matrix.ids,
    }
    with open(base.with_suffix(".json"), "w") as fh:
        json.dump(header, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_features(path_base: str | Path) -> tuple[FeatureMatrix, dict]:
    base = Path(path_base)
    values = np.load(base.with_suffix(".npy"))
    with open(base.with_suffix(".json")) as fh:
        header = json.load(fh)
    matrix = FeatureMatrix(ids=list(header["ids"]), values=values)
    if matrix.id_list_hash() != header["image_id_list_hash"]:
        raise ValueError("feature cache id list does not match its header hash")
    return matrix, header
