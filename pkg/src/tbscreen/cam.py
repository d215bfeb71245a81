"""Activation heatmaps for radiologist review.

Default mode taps the final convolutional layer, picks the strongest
activated channel (largest activation sum), min-max normalizes that map
and upsamples it bilinearly onto the input image. A classic class-weighted
mode (head-weight-weighted sum of all channel maps for the predicted
class) is available for backbones whose head sits directly on pooled
channels.

The overlay colormap is a fixed five-anchor ramp so renders are bit-exact
across machines: 0.0 blue, 0.25 cyan, 0.5 green, 0.75 yellow, 1.0 red.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from .data import ImageTensor
from .models import ClassifierModel, to_input_batch

MODES = ("strongest_channel", "class_weighted")

_RAMP_STOPS = np.array([0.0, 0.25, 0.5, 0.75, 1.0])
_RAMP_R = np.array([0.0, 0.0, 0.0, 1.0, 1.0])
_RAMP_G = np.array([0.0, 1.0, 1.0, 1.0, 0.0])
_RAMP_B = np.array([1.0, 1.0, 0.0, 0.0, 0.0])


@dataclass
class FeatureMapStack:
    """C x h x w post-ReLU activations from the tapped layer."""

    activations: np.ndarray

    def __post_init__(self):
        if self.activations.ndim != 3 or self.activations.shape[0] < 1:
            raise ValueError(f"expected CxHxW activations, got shape {self.activations.shape}")
        if not np.all(np.isfinite(self.activations)):
            raise ValueError("activations must be finite")
        if np.any(self.activations < 0):
            raise ValueError("activations must be nonnegative (tap a post-ReLU layer)")

    @property
    def channels(self) -> int:
        return self.activations.shape[0]


@dataclass
class Heatmap:
    """H x W saliency values in [0, 1], aligned with the input image."""

    values: np.ndarray

    def __post_init__(self):
        if self.values.ndim != 2:
            raise ValueError(f"expected HxW heatmap, got shape {self.values.shape}")
        if self.values.size and (self.values.min() < 0.0 or self.values.max() > 1.0):
            raise ValueError("heatmap values must lie in [0, 1]")

    @property
    def dims(self) -> tuple[int, int]:
        return self.values.shape


def extract_final_conv_maps(model: ClassifierModel, image: ImageTensor) -> FeatureMapStack:
    """Forward the image and capture the activation stack at the
    backbone's designated final convolutional layer."""
    layer_name = model.spec.final_conv_layer
    try:
        module = model.net.get_submodule(layer_name)
    except AttributeError as exc:
        raise ValueError(f"cannot resolve tap layer {layer_name!r} on {model.spec.name}") from exc

    captured: list[torch.Tensor] = []

    def hook(_mod, _inp, out):
        captured.append(out.detach())

    handle = module.register_forward_hook(hook)
    try:
        x = to_input_batch([image], model.spec)
        model.net.eval()
        with torch.no_grad():
            model.net(x)
    finally:
        handle.remove()
    if not captured:
        raise ValueError(f"tap layer {layer_name!r} did not fire during the forward pass")
    return FeatureMapStack(activations=captured[0][0].numpy().astype(np.float32))


def strongest_channel(stack: FeatureMapStack, mode: str = "sum") -> int:
    """Channel with the largest activation sum (or single max value);
    ties resolve to the lowest index."""
    if mode == "sum":
        per_channel = stack.activations.reshape(stack.channels, -1).sum(axis=1)
    elif mode == "max":
        per_channel = stack.activations.reshape(stack.channels, -1).max(axis=1)
    else:
        raise ValueError(f"unknown strongest-channel mode {mode!r}")
    return int(np.argmax(per_channel))


def _normalize_upsample(map2d: np.ndarray, out_dims: tuple[int, int]) -> Heatmap:
    """Min-max normalize (constant maps become all zeros, signalling 'no
    localization') then bilinearly upsample."""
    lo = float(map2d.min())
    hi = float(map2d.max())
    if hi > lo:
        norm = (map2d - lo) / (hi - lo)
    else:
        norm = np.zeros_like(map2d, dtype=np.float32)
    oh, ow = out_dims
    resized = Image.fromarray(norm.astype(np.float32), mode="F").resize((ow, oh), Image.BILINEAR)
    values = np.clip(np.asarray(resized, dtype=np.float32), 0.0, 1.0)
    return Heatmap(values=values)


def make_heatmap(stack: FeatureMapStack, channel: int, out_dims: tuple[int, int]) -> Heatmap:
    if not (0 <= channel < stack.channels):
        raise ValueError(f"channel {channel} out of range (stack has {stack.channels})")
    return _normalize_upsample(stack.activations[channel], out_dims)


def class_weighted_map(stack: FeatureMapStack, weights: np.ndarray) -> np.ndarray:
    """Weighted sum of channel maps (classic CAM, before normalization)."""
    w = np.asarray(weights, dtype=np.float64)
    if w.shape != (stack.channels,):
        raise ValueError(f"need one weight per channel ({stack.channels}), got shape {w.shape}")
    return np.einsum("c,chw->hw", w, stack.activations.astype(np.float64))


def heatmap_for(
    model: ClassifierModel,
    image: ImageTensor,
    mode: str = "strongest_channel",
    channel_rule: str = "sum",
) -> tuple[Heatmap, dict]:
    """Compute a heatmap at the image's own dims; returns (heatmap, meta)."""
    if mode not in MODES:
        raise ValueError(f"unknown heatmap mode {mode!r}; known: {MODES}")
    stack = extract_final_conv_maps(model, image)
    meta: dict = {"mode": mode, "backbone": model.spec.name, "tap_layer": model.spec.final_conv_layer}
    if mode == "strongest_channel":
        ch = strongest_channel(stack, mode=channel_rule)
        raw = stack.activations[ch]
        heatmap = make_heatmap(stack, ch, image.dims)
        meta.update({"channel": ch, "channel_rule": channel_rule})
    else:
        head = model.head()
        in_features = head.weight.shape[1]
        if in_features != stack.channels:
            raise ValueError(
                f"class-weighted mode needs the head to sit on pooled channel features; "
                f"{model.spec.name} has head width {in_features} vs {stack.channels} channels "
                f"(use mode='strongest_channel')"
            )
        from .models import predict

        probs = predict(model, image)
        pred_class = int(np.argmax(probs))
        weights = head.weight.detach().numpy()[pred_class]
        raw = class_weighted_map(stack, weights)
        heatmap = _normalize_upsample(raw.astype(np.float32), image.dims)
        meta.update({"predicted_class": pred_class})
    meta.update(
        {
            "raw_map_min": float(raw.min()),
            "raw_map_max": float(raw.max()),
            "raw_map_mean": float(raw.mean()),
        }
    )
    return heatmap, meta


def colormap_ramp(values: np.ndarray) -> np.ndarray:
    """Map [0,1] saliency to RGB floats via the fixed blue->red ramp."""
    v = np.clip(np.asarray(values, dtype=np.float64), 0.0, 1.0)
    r = np.interp(v, _RAMP_STOPS, _RAMP_R)
    g = np.interp(v, _RAMP_STOPS, _RAMP_G)
    b = np.interp(v, _RAMP_STOPS, _RAMP_B)
    return np.stack([r, g, b], axis=-1)


def overlay(image: ImageTensor, heatmap: Heatmap, alpha: float = 0.5) -> np.ndarray:
    """Blend: (1-alpha) * grayscale CXR + alpha * colormapped heatmap.

    Returns an HxWx3 uint8 array. alpha=0 reproduces the (grayscale)
    input exactly for 8-bit sources.
    """
    if not (0.0 <= alpha <= 1.0):
        raise ValueError("alpha must lie in [0, 1]")
    if heatmap.dims != image.dims:
        raise ValueError(f"heatmap dims {heatmap.dims} do not match image dims {image.dims}")
    gray = image.values.mean(axis=2, dtype=np.float64)
    gray_rgb = np.repeat(gray[:, :, None], 3, axis=2)
    colored = colormap_ramp(heatmap.values)
    blended = (1.0 - alpha) * gray_rgb + alpha * colored
    return np.round(np.clip(blended, 0.0, 1.0) * 255.0).astype(np.uint8)


def save_overlay_png(path: str | Path, rendered: np.ndarray) -> None:
    Image.fromarray(rendered, mode="RGB").save(path, format="PNG")


def render_case(
    model: ClassifierModel,
    image: ImageTensor,
    out_png: str | Path,
    out_json: str | Path | None = None,
    mode: str = "strongest_channel",
    alpha: float = 0.5,
) -> dict:
    """Full pipeline: heatmap + overlay PNG + JSON metadata sidecar."""
    heatmap, meta = heatmap_for(model, image, mode=mode)
    rendered = overlay(image, heatmap, alpha=alpha)
    save_overlay_png(out_png, rendered)
    meta["alpha"] = alpha
    if out_json is not None:
        with open(out_json, "w") as fh:
            json.dump(meta, fh, indent=2, sort_keys=True)
            fh.write("\n")
    return meta
