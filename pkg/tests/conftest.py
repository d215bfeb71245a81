import warnings
from pathlib import Path

import numpy as np
import pytest
from PIL import Image

warnings.filterwarnings("ignore", category=UserWarning)

from tbscreen.data import CxrRecord, DatasetManifest, SplitAssignment


def write_gray_png(path: Path, pixels: np.ndarray) -> None:
    Image.fromarray(pixels.astype(np.uint8), mode="L").save(path, format="PNG")


def make_cxr_dir(
    root: Path,
    n_healthy: int = 4,
    n_tb: int = 4,
    size: int = 64,
    seed: int = 0,
    layout: str = "subdirs",
) -> Path:
    """Synthetic two-class folder: TB images carry a bright patch so even a
    random-feature classifier can separate the classes."""
    rng = np.random.default_rng(seed)
    if layout == "subdirs":
        (root / "healthy").mkdir(parents=True, exist_ok=True)
        (root / "tb").mkdir(parents=True, exist_ok=True)
    else:
        root.mkdir(parents=True, exist_ok=True)
    for i in range(n_healthy):
        img = (rng.random((size, size)) * 60 + 20).astype(np.uint8)
        name = f"CHNCXR_{i:04d}_0.png" if layout == "shenzhen" else f"h{i}.png"
        dest = root / name if layout == "shenzhen" else root / "healthy" / name
        write_gray_png(dest, img)
    for i in range(n_tb):
        img = (rng.random((size, size)) * 60 + 20).astype(np.uint8)
        lo, hi = size // 6, size // 2
        img[lo:hi, size // 2 : size - lo] = 230
        name = f"CHNCXR_{1000 + i:04d}_1.png" if layout == "shenzhen" else f"t{i}.png"
        dest = root / name if layout == "shenzhen" else root / "tb" / name
        write_gray_png(dest, img)
    return root


def manifest_of_fakes(n_healthy: int, n_tb: int) -> DatasetManifest:
    """Manifest with records that never touch the filesystem (split tests)."""
    records = [
        CxrRecord(id=f"h{i}", image_path=f"/fake/h{i}.png", label="healthy", width_px=8, height_px=8)
        for i in range(n_healthy)
    ] + [
        CxrRecord(id=f"t{i}", image_path=f"/fake/t{i}.png", label="tb", width_px=8, height_px=8)
        for i in range(n_tb)
    ]
    return DatasetManifest(records=records)


@pytest.fixture(scope="session")
def alexnet_scratch():
    from tbscreen.models import build_classifier

    return build_classifier("alexnet", pretrained=False, head_seed=0)


@pytest.fixture(scope="session")
def trainable_dataset(tmp_path_factory):
    """20 train + 20 val records over the same 20 images (227x227),
    bright-patch TB class; shared across training tests."""
    root = tmp_path_factory.mktemp("trainset")
    make_cxr_dir(root, n_healthy=10, n_tb=10, size=227, seed=42)
    from tbscreen.data import scan_dataset

    scan = scan_dataset(root, layout="subdirs")
    records = list(scan.manifest.records)
    val_records = []
    valdir = root / "val_copies"
    valdir.mkdir()
    import shutil

    for r in records:
        dst = valdir / ("v_" + Path(r.image_path).name)
        shutil.copy(r.image_path, dst)
        val_records.append(
            CxrRecord(
                id="v_" + r.id,
                image_path=str(dst),
                label=r.label,
                width_px=r.width_px,
                height_px=r.height_px,
            )
        )
    manifest = DatasetManifest(records=records + val_records)
    split = SplitAssignment(
        split_of={**{r.id: "train" for r in records}, **{r.id: "val" for r in val_records}},
        seed=0,
    )
    return manifest, split
