"""Two-class chest X-ray classifiers on ImageNet-pretrained backbones.

Five torchvision backbones are supported. Each gets its 1000-way head
replaced by a fresh 2-logit layer (healthy, tb) initialized from a
zero-mean Gaussian with std 0.01 and zero bias. The final convolutional
layer of every backbone is recorded so activation heatmaps and feature
extraction can tap it by name.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn
from torchvision import models as tvm

from .data import ImageTensor

# torchvision's documented preprocessing for ImageNet-pretrained models
IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)

CLASS_NAMES = ("healthy", "tb")


class WeightsUnavailableError(RuntimeError):
    pass


@dataclass(frozen=True)
class BackboneSpec:
    name: str
    input_dims: tuple[int, int]
    final_conv_layer: str  # post-ReLU activation stack, C x H x W
    feature_layer: str  # penultimate features for the linear baseline
    feature_dim: int
    param_count_millions: float  # published size of the 1000-class network


BACKBONES: dict[str, BackboneSpec] = {
    "alexnet": BackboneSpec("alexnet", (227, 227), "features.11", "classifier.5", 4096, 60.0),
    "googlenet": BackboneSpec("googlenet", (224, 224), "inception5b", "avgpool", 1024, 7.0),
    "resnet18": BackboneSpec("resnet18", (224, 224), "layer4", "avgpool", 512, 11.7),
    "resnet50": BackboneSpec("resnet50", (224, 224), "layer4", "avgpool", 2048, 25.6),
    "resnet101": BackboneSpec("resnet101", (224, 224), "layer4", "avgpool", 2048, 44.6),
}


@dataclass
class ClassifierModel:
    net: nn.Module
    spec: BackboneSpec
    weights_origin: str  # imagenet_pretrained | finetuned | random

    def head(self) -> nn.Linear:
        if self.spec.name == "alexnet":
            return self.net.classifier[6]
        return self.net.fc

    def backbone_parameters(self):
        head = self.head()
        head_ids = {id(p) for p in head.parameters()}
        return [p for p in self.net.parameters() if id(p) not in head_ids]


def _construct(name: str, weights) -> nn.Module:
    if name == "alexnet":
        return tvm.alexnet(weights=weights)
    if name == "googlenet":
        if weights is None:
            return tvm.googlenet(weights=None, aux_logits=False, init_weights=True)
        return tvm.googlenet(weights=weights, aux_logits=False)
    if name == "resnet18":
        return tvm.resnet18(weights=weights)
    if name == "resnet50":
        return tvm.resnet50(weights=weights)
    if name == "resnet101":
        return tvm.resnet101(weights=weights)
    raise ValueError(f"unknown backbone {name!r}; known: {sorted(BACKBONES)}")


_WEIGHT_ENUMS = {
    "alexnet": "AlexNet_Weights",
    "googlenet": "GoogLeNet_Weights",
    "resnet18": "ResNet18_Weights",
    "resnet50": "ResNet50_Weights",
    "resnet101": "ResNet101_Weights",
}


def build_classifier(name: str, pretrained: bool = True, head_seed: int = 0) -> ClassifierModel:
    """Build a 2-class classifier on the named backbone.

    With pretrained=True all backbone weights come from the torchvision
    ImageNet checkpoints; only the new 2-class head is freshly initialized
    (Gaussian std 0.01, zero bias, seeded by head_seed).
    """
    if name not in BACKBONES:
        raise ValueError(f"unknown backbone {name!r}; known: {sorted(BACKBONES)}")
    spec = BACKBONES[name]

    weights = None
    if pretrained:
        weights = getattr(tvm, _WEIGHT_ENUMS[name]).IMAGENET1K_V1
    try:
        # fork_rng keeps scratch initialization reproducible per head_seed
        # without disturbing the caller's global RNG state
        with torch.random.fork_rng():
            torch.manual_seed(head_seed)
            net = _construct(name, weights)
    except Exception as exc:
        if not pretrained:
            raise
        url = getattr(weights, "url", "the torchvision model zoo")
        cache = Path(torch.hub.get_dir()) / "checkpoints"
        raise WeightsUnavailableError(
            f"pretrained weights for {name!r} could not be loaded ({exc}). "
            f"Download {url} on a machine with network access and place the "
            f"file under {cache} (override the cache root with TORCH_HOME), "
            f"then rerun."
        ) from exc

    _replace_head(net, name, head_seed)
    net.eval()
    return ClassifierModel(net=net, spec=spec, weights_origin="imagenet_pretrained" if pretrained else "random")


def _replace_head(net: nn.Module, name: str, head_seed: int) -> None:
    if name == "alexnet":
        in_features = net.classifier[6].in_features
        net.classifier[6] = _fresh_head(in_features, head_seed)
    else:
        in_features = net.fc.in_features
        net.fc = _fresh_head(in_features, head_seed)


def _fresh_head(in_features: int, head_seed: int) -> nn.Linear:
    head = nn.Linear(in_features, 2)
    g = torch.Generator().manual_seed(head_seed)
    with torch.no_grad():
        head.weight.copy_(torch.normal(0.0, 0.01, size=(2, in_features), generator=g))
        head.bias.zero_()
    return head


def relu(x):
    """Elementwise max(0, x); accepts numpy arrays, torch tensors or scalars."""
    if isinstance(x, torch.Tensor):
        return torch.clamp(x, min=0)
    return np.maximum(np.asarray(x), 0)


def residual_apply(x, branch):
    """Skip connection: return x + branch(x); shapes must agree."""
    fx = branch(x)
    x_shape = tuple(x.shape) if hasattr(x, "shape") else np.shape(x)
    fx_shape = tuple(fx.shape) if hasattr(fx, "shape") else np.shape(fx)
    if x_shape != fx_shape:
        raise ValueError(f"residual branch output shape {fx_shape} does not match input {x_shape}")
    return x + fx


def standardize(values: np.ndarray) -> torch.Tensor:
    """[0,1] HxWx3 -> mean/std standardized CHW tensor (ImageNet convention)."""
    t = torch.from_numpy(np.ascontiguousarray(values)).permute(2, 0, 1).float()
    mean = torch.tensor(IMAGENET_MEAN).view(3, 1, 1)
    std = torch.tensor(IMAGENET_STD).view(3, 1, 1)
    return (t - mean) / std


def to_input_batch(images: list[ImageTensor], spec: BackboneSpec) -> torch.Tensor:
    batch = []
    for image in images:
        if image.dims != spec.input_dims:
            raise ValueError(
                f"image dims {image.dims} do not match {spec.name} input dims {spec.input_dims}"
            )
        if image.value_range != "unit":
            raise ValueError(f"expected unit-range image values, got {image.value_range!r}")
        batch.append(standardize(image.values))
    return torch.stack(batch)


def predict_batch(model: ClassifierModel, images: list[ImageTensor]) -> np.ndarray:
    """Class probabilities, one (p_healthy, p_tb) row per image."""
    x = to_input_batch(images, model.spec)
    model.net.eval()
    with torch.no_grad():
        logits = model.net(x)
        probs = torch.softmax(logits, dim=1)
    return probs.numpy().astype(np.float64)


def predict(model: ClassifierModel, image: ImageTensor) -> tuple[float, float]:
    """(p_healthy, p_tb) for one image; deterministic (dropout disabled)."""
    probs = predict_batch(model, [image])[0]
    return float(probs[0]), float(probs[1])


def tb_score(model: ClassifierModel, image: ImageTensor) -> float:
    return predict(model, image)[1]


def param_count(module_or_model) -> int:
    net = module_or_model.net if isinstance(module_or_model, ClassifierModel) else module_or_model
    return sum(p.numel() for p in net.parameters())


def published_param_count(name: str) -> int:
    """Parameter count of the original 1000-class architecture (the size
    quoted in the literature, before the 2-class head swap)."""
    if name not in BACKBONES:
        raise ValueError(f"unknown backbone {name!r}; known: {sorted(BACKBONES)}")
    with torch.random.fork_rng():
        torch.manual_seed(0)
        net = _construct(name, None)
    return param_count(net)


def weights_checksum(params) -> str:
    """Order-stable digest of a parameter iterable (for tamper checks)."""
    digest = hashlib.sha256()
    for p in params:
        digest.update(p.detach().numpy().tobytes())
    return digest.hexdigest()


def backbone_checksum(model: ClassifierModel) -> str:
    return weights_checksum(model.backbone_parameters())


# ---------------------------------------------------------------------------
# checkpoints: weights file + JSON sidecar


def save_checkpoint(
    model: ClassifierModel,
    path: str | Path,
    train_config_hash: str = "",
    epoch: int = 0,
    val_accuracy: float | None = None,
) -> None:
    path = Path(path)
    payload = {
        "state_dict": model.net.state_dict(),
        "backbone": model.spec.name,
        "weights_origin": model.weights_origin,
    }
    # GoogLeNet's input rescaling flag lives outside the state dict
    if hasattr(model.net, "transform_input"):
        payload["transform_input"] = bool(model.net.transform_input)
    torch.save(payload, path)
    sidecar = {
        "backbone": model.spec.name,
        "weights_origin": model.weights_origin,
        "train_config_hash": train_config_hash,
        "epoch": epoch,
        "val_accuracy": val_accuracy,
    }
    with open(path.with_suffix(path.suffix + ".json"), "w") as fh:
        json.dump(sidecar, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_checkpoint(path: str | Path) -> ClassifierModel:
    payload = torch.load(path, map_location="cpu", weights_only=True)
    name = payload["backbone"]
    model = build_classifier(name, pretrained=False)
    model.net.load_state_dict(payload["state_dict"])
    if hasattr(model.net, "transform_input") and "transform_input" in payload:
        model.net.transform_input = payload["transform_input"]
    model.net.eval()
    return ClassifierModel(net=model.net, spec=model.spec, weights_origin=payload.get("weights_origin", "finetuned"))
