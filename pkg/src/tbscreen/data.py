"""Dataset discovery, stratified splitting, image loading and augmentation.

Manifests are JSON-lines (one record per line); split assignments are a
single JSON object carrying the seed and ratios next to the id->split map,
so a split file is self-describing and reproducible.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, asdict
from pathlib import Path
from typing import Iterable

import numpy as np
from PIL import Image

LABELS = ("healthy", "tb")
SOURCES = ("indian", "shenzhen", "other")
SPLIT_NAMES = ("train", "val", "test")
IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg"}

DEFAULT_RATIOS = (0.50, 0.25, 0.25)


@dataclass
class CxrRecord:
    id: str
    image_path: str
    label: str
    source: str = "other"
    width_px: int = 0
    height_px: int = 0

    def __post_init__(self):
        if self.label not in LABELS:
            raise ValueError(f"label must be one of {LABELS}, got {self.label!r}")
        if self.source not in SOURCES:
            raise ValueError(f"source must be one of {SOURCES}, got {self.source!r}")
        if self.width_px <= 0 or self.height_px <= 0:
            raise ValueError(f"image dimensions must be positive, got {self.width_px}x{self.height_px}")


@dataclass
class DatasetManifest:
    records: list[CxrRecord] = field(default_factory=list)

    def __post_init__(self):
        ids = [r.id for r in self.records]
        if len(set(ids)) != len(ids):
            dupes = sorted({i for i in ids if ids.count(i) > 1})
            raise ValueError(f"duplicate record ids in manifest: {dupes[:5]}")
        paths = [r.image_path for r in self.records]
        if len(set(paths)) != len(paths):
            raise ValueError("duplicate image_path in manifest")

    @property
    def class_counts(self) -> dict[str, int]:
        counts = {label: 0 for label in LABELS}
        for r in self.records:
            counts[r.label] += 1
        return {k: v for k, v in counts.items() if v > 0}

    def by_id(self) -> dict[str, CxrRecord]:
        return {r.id: r for r in self.records}

    def write_jsonl(self, path: str | Path) -> None:
        with open(path, "w") as fh:
            for r in self.records:
                fh.write(json.dumps(asdict(r), sort_keys=True) + "\n")

    @classmethod
    def read_jsonl(cls, path: str | Path) -> "DatasetManifest":
        records = []
        with open(path) as fh:
            for line in fh:
                line = line.strip()
                if line:
                    records.append(CxrRecord(**json.loads(line)))
        return cls(records=records)


@dataclass
class ScanResult:
    manifest: DatasetManifest
    undecodable: list[dict] = field(default_factory=list)  # {"path":..., "reason":...}
    unlabeled: list[str] = field(default_factory=list)

    def write_report(self, path: str | Path) -> None:
        report = {
            "class_counts": self.manifest.class_counts,
            "n_records": len(self.manifest.records),
            "undecodable": self.undecodable,
            "unlabeled": self.unlabeled,
        }
        with open(path, "w") as fh:
            json.dump(report, fh, indent=2, sort_keys=True)
            fh.write("\n")


def _probe_image(path: Path) -> tuple[int, int]:
    """Return (width, height); raises on undecodable files."""
    with Image.open(path) as im:
        w, h = im.size
        im.verify()
    return w, h


def _shenzhen_label(path: Path) -> str | None:
    # CHNCXR_0042_0.png -> healthy, CHNCXR_0042_1.png -> tb
    stem = path.stem
    if stem.endswith("_0"):
        return "healthy"
    if stem.endswith("_1"):
        return "tb"
    return None


def _read_labels_csv(path: Path) -> dict[str, str]:
    import csv as _csv

    table: dict[str, str] = {}
    with open(path, newline="") as fh:
        for row in _csv.reader(fh):
            if not row or row[0].lower() in ("filename", "file", "id"):
                continue
            if len(row) < 2:
                raise ValueError(f"labels file row needs 'filename,label': {row}")
            table[row[0]] = row[1].strip()
    return table


def scan_dataset(
    root: str | Path,
    layout: str = "subdirs",
    source: str = "other",
    labels_file: str | Path | None = None,
) -> ScanResult:
    """Walk `root` and build a manifest of decodable, labeled images.

    Layouts:
      subdirs   -- images live under root/healthy/ and root/tb/
      shenzhen  -- flat folder, filename stem ends in _0 (healthy) or _1 (tb)
      csv       -- flat or nested folder plus a sidecar CSV (filename,label);
                   defaults to root/labels.csv

    Undecodable files and files with no label are reported, never silently
    dropped.
    """
    root = Path(root)
    if not root.is_dir():
        raise FileNotFoundError(f"dataset root does not exist: {root}")
    if layout not in ("subdirs", "shenzhen", "csv"):
        raise ValueError(f"unknown layout {layout!r}")

    label_table: dict[str, str] = {}
    if layout == "csv":
        csv_path = Path(labels_file) if labels_file else root / "labels.csv"
        if not csv_path.is_file():
            raise FileNotFoundError(f"labels file not found: {csv_path}")
        label_table = _read_labels_csv(csv_path)

    records: list[CxrRecord] = []
    undecodable: list[dict] = []
    unlabeled: list[str] = []

    for path in sorted(root.rglob("*")):
        if not path.is_file() or path.suffix.lower() not in IMAGE_SUFFIXES:
            continue
        rel = path.relative_to(root).as_posix()

        if layout == "subdirs":
            top = rel.split("/", 1)[0] if "/" in rel else None
            label = top if top in LABELS else None
        elif layout == "shenzhen":
            label = _shenzhen_label(path)
        else:
            raw = label_table.get(rel, label_table.get(path.name))
            label = raw if raw in LABELS else None

        if label is None:
            unlabeled.append(rel)
            continue
        try:
            w, h = _probe_image(path)
        except Exception as exc:
            undecodable.append({"path": rel, "reason": f"{type(exc).__name__}: {exc}"})
            continue
        records.append(
            CxrRecord(id=rel, image_path=str(path), label=label, source=source, width_px=w, height_px=h)
        )

    return ScanResult(manifest=DatasetManifest(records=records), undecodable=undecodable, unlabeled=unlabeled)


# ---------------------------------------------------------------------------
# stratified split


@dataclass
class SplitAssignment:
    split_of: dict[str, str]
    seed: int
    ratios: tuple[float, float, float] = DEFAULT_RATIOS

    def ids_for(self, split: str) -> list[str]:
        if split not in SPLIT_NAMES:
            raise ValueError(f"unknown split {split!r}")
        return sorted(i for i, s in self.split_of.items() if s == split)

    def write_json(self, path: str | Path) -> None:
        payload = {
            "seed": self.seed,
            "ratios": list(self.ratios),
            "split_of": {k: self.split_of[k] for k in sorted(self.split_of)},
        }
        with open(path, "w") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def read_json(cls, path: str | Path) -> "SplitAssignment":
        with open(path) as fh:
            payload = json.load(fh)
        return cls(
            split_of=dict(payload["split_of"]),
            seed=int(payload["seed"]),
            ratios=tuple(payload["ratios"]),
        )

    def content_hash(self) -> str:
        canon = json.dumps(
            {"seed": self.seed, "ratios": list(self.ratios), "split_of": dict(sorted(self.split_of.items()))},
            sort_keys=True,
        )
        return hashlib.sha256(canon.encode()).hexdigest()


def _split_counts(n: int, ratios: tuple[float, float, float]) -> tuple[int, int, int]:
    """Largest-remainder apportionment; remainder ties go to the earlier
    split in (train, val, test) order."""
    raw = [n * r for r in ratios]
    counts = [int(np.floor(v)) for v in raw]
    remainder = n - sum(counts)
    fracs = sorted(range(3), key=lambda i: (-(raw[i] - counts[i]), i))
    for i in range(remainder):
        counts[fracs[i]] += 1
    return tuple(counts)


def stratified_split(
    manifest: DatasetManifest,
    ratios: tuple[float, float, float] = DEFAULT_RATIOS,
    seed: int = 0,
) -> SplitAssignment:
    """Assign every record to train/val/test, stratified per class.

    Per-class counts follow largest-remainder rounding of the ratios, so
    each split lands within one item of its target fraction for every
    class. A fixed seed reproduces the assignment exactly.
    """
    if len(ratios) != 3 or any(r <= 0 for r in ratios):
        raise ValueError(f"ratios must be three positive fractions, got {ratios}")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"ratios must sum to 1, got {ratios}")

    by_class: dict[str, list[str]] = {}
    for r in manifest.records:
        by_class.setdefault(r.label, []).append(r.id)

    for label, ids in sorted(by_class.items()):
        if len(ids) < 4:
            raise ValueError(
                f"class {label!r} has only {len(ids)} members; "
                "stratified 50/25/25 splitting needs at least 4 per class"
            )

    split_of: dict[str, str] = {}
    for label in sorted(by_class):
        ids = sorted(by_class[label])
        rng = np.random.default_rng(np.random.SeedSequence([seed, _stable_id_int(label)]))
        rng.shuffle(ids)
        n_train, n_val, n_test = _split_counts(len(ids), tuple(ratios))
        for i in ids[:n_train]:
            split_of[i] = "train"
        for i in ids[n_train : n_train + n_val]:
            split_of[i] = "val"
        for i in ids[n_train + n_val :]:
            split_of[i] = "test"

    return SplitAssignment(split_of=split_of, seed=seed, ratios=tuple(ratios))


def _stable_id_int(text: str) -> int:
    return int.from_bytes(hashlib.sha256(text.encode()).digest()[:8], "little")


# ---------------------------------------------------------------------------
# image loading + augmentation


@dataclass
class ImageTensor:
    """H x W x 3 float32 values; `value_range` declares the normalization
    ('unit' means intensities scaled into [0, 1])."""

    values: np.ndarray
    value_range: str = "unit"

    def __post_init__(self):
        if self.values.ndim != 3 or self.values.shape[2] != 3:
            raise ValueError(f"expected HxWx3 values, got shape {self.values.shape}")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("image values must be finite")

    @property
    def dims(self) -> tuple[int, int]:
        return self.values.shape[0], self.values.shape[1]


def load_and_resize(record: CxrRecord, target: tuple[int, int]) -> ImageTensor:
    """Decode, resize bilinearly to (height, width) and scale to [0, 1].

    Grayscale input (8- or 16-bit) is replicated to 3 channels. The
    backbone-specific mean/std standardization happens at batch assembly,
    not here, so augmentation can run in plain intensity space.
    """
    th, tw = target
    if th <= 0 or tw <= 0:
        raise ValueError(f"target dims must be positive, got {target}")
    try:
        with Image.open(record.image_path) as im:
            im.load()
            arr = _to_unit_rgb(im, (th, tw))
    except Exception as exc:
        raise ValueError(f"cannot decode {record.image_path}: {exc}") from exc
    return ImageTensor(values=arr, value_range="unit")


def _to_unit_rgb(im: Image.Image, target: tuple[int, int]) -> np.ndarray:
    th, tw = target
    if im.mode in ("I", "I;16", "I;16B", "I;16L"):
        # 16-bit grayscale: resize in float, scale by the 16-bit range
        arr = np.asarray(im.convert("F").resize((tw, th), Image.BILINEAR), dtype=np.float32)
        arr = arr / 65535.0
        return np.repeat(arr[:, :, None], 3, axis=2)
    if im.mode == "L":
        arr = np.asarray(im.convert("F").resize((tw, th), Image.BILINEAR), dtype=np.float32)
        arr = arr / 255.0
        return np.repeat(arr[:, :, None], 3, axis=2)
    rgb = im.convert("RGB").resize((tw, th), Image.BILINEAR)
    return np.asarray(rgb, dtype=np.float32) / 255.0


@dataclass
class AugmentationConfig:
    horizontal_mirror_prob: float = 0.5
    max_translate_px: int = 30
    fill_value: float = 0.0  # black borders: CXR background is radiolucent
    seed: int = 0

    def __post_init__(self):
        if not (0.0 <= self.horizontal_mirror_prob <= 1.0):
            raise ValueError("horizontal_mirror_prob must lie in [0, 1]")
        if self.max_translate_px < 0:
            raise ValueError("max_translate_px must be >= 0")

    def validate_for_dims(self, dims: tuple[int, int]) -> None:
        """Fail fast (at config time, not mid-training) when images are too
        small to translate by the configured amount."""
        h, w = dims
        if h < 2 * self.max_translate_px or w < 2 * self.max_translate_px:
            raise ValueError(
                f"image dims {h}x{w} must be at least twice max_translate_px "
                f"({self.max_translate_px}) in each axis"
            )


def rng_for(seed: int, record_id: str, epoch: int = 0) -> np.random.Generator:
    """Per-record generator stream, stable under parallel loading order."""
    return np.random.default_rng(np.random.SeedSequence([seed, epoch, _stable_id_int(record_id)]))


def draw_augmentation(config: AugmentationConfig, rng: np.random.Generator) -> tuple[bool, int, int]:
    """Draw (mirror, dx, dy) in a fixed order; dx shifts columns, dy rows,
    both uniform over [-max_translate_px, +max_translate_px]."""
    mirror = bool(rng.random() < config.horizontal_mirror_prob)
    m = config.max_translate_px
    dx = int(rng.integers(-m, m + 1)) if m > 0 else 0
    dy = int(rng.integers(-m, m + 1)) if m > 0 else 0
    return mirror, dx, dy


def translate(values: np.ndarray, dx: int, dy: int, fill_value: float) -> np.ndarray:
    """Shift content by +dx columns and +dy rows, filling exposed borders."""
    h, w = values.shape[:2]
    out = np.full_like(values, fill_value)
    src_r = slice(max(-dy, 0), h - max(dy, 0))
    src_c = slice(max(-dx, 0), w - max(dx, 0))
    dst_r = slice(max(dy, 0), h + min(dy, 0))
    dst_c = slice(max(dx, 0), w + min(dx, 0))
    out[dst_r, dst_c] = values[src_r, src_c]
    return out


def augment(image: ImageTensor, config: AugmentationConfig, rng: np.random.Generator) -> ImageTensor:
    """Random left-right mirror then random translation with border fill.

    Output dims always equal input dims; the label is untouched by
    construction (this function never sees it).
    """
    config.validate_for_dims(image.dims)
    mirror, dx, dy = draw_augmentation(config, rng)
    vals = image.values
    if mirror:
        vals = vals[:, ::-1, :]
    if dx != 0 or dy != 0:
        vals = translate(vals, dx, dy, config.fill_value)
    elif mirror:
        vals = np.ascontiguousarray(vals)
    else:
        vals = vals.copy()
    return ImageTensor(values=vals, value_range=image.value_range)
