"""Acceptance suite: one test per criterion, each printing a PASS line
with the measured numbers (run with -s to stream them).

Criterion 5 needs the public Shenzhen image set plus the pretrained
AlexNet weights; when either is absent the test skips with instructions
instead of faking a result.
"""

import json
import math
import os
import signal
import socket
import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pytest
import torch

import tbscreen.cam as C
import tbscreen.data as D
import tbscreen.metrics as M
import tbscreen.training as T
from tbscreen.models import build_classifier, save_checkpoint, WeightsUnavailableError

SHENZHEN_DIR = os.environ.get("TBSCREEN_SHENZHEN_DIR", str(Path(__file__).resolve().parents[1] / "data" / "shenzhen"))


def _pass(n: int, detail: str) -> None:
    print(f"PASS criterion {n}: {detail}")


def test_criterion_1_metric_fixtures():
    """Published confusion rows reproduce the percentage table within
    0.05 pp (ResNet101 accuracy: documented rounding anomaly, 93.38)."""
    rows = {
        "alexnet": ((69, 55, 11, 1), (98.60, 83.30, 91.18)),
        "googlenet": ((65, 56, 10, 5), (92.90, 84.80, 88.97)),
        "resnet18": ((69, 58, 8, 1), (98.60, 87.87, 93.38)),
        "resnet50": ((63, 61, 5, 7), (90.00, 92.42, 91.18)),
        "resnet101": ((65, 62, 4, 5), (92.90, 93.93, 93.40)),
    }
    checked = 0
    for name, ((tp, tn, fp, fn), (sens, spec, acc)) in rows.items():
        rep = M.metrics(M.ConfusionMatrix(tp, tn, fp, fn))
        assert abs(rep.sensitivity * 100 - sens) <= 0.05, name
        assert abs(rep.specificity * 100 - spec) <= 0.05, name
        if name == "resnet101":
            assert round(rep.accuracy * 100, 2) == 93.38  # table prints 93.40
        else:
            assert abs(rep.accuracy * 100 - acc) <= 0.05, name
        checked += 3
    _pass(1, f"{checked} table entries reproduced within 0.05 pp (resnet101 accuracy = 93.38)")


def test_criterion_2_auc_oracle_equivalence():
    """Trapezoid-over-ROC vs pairwise statistic on 1000 random instances."""
    rng = np.random.default_rng(2024)
    worst = 0.0
    for _ in range(1000):
        n = int(rng.integers(2, 51))
        labels = rng.integers(0, 2, n)
        labels[0], labels[1] = 0, 1  # both classes present
        if rng.random() < 0.5:
            scores = np.round(rng.random(n), 1)  # heavy ties
        else:
            scores = rng.random(n)
        trap = M.auc_trapezoid(M.roc_curve(scores, labels))
        pair = M.auc_pairwise_oracle(scores, labels)
        worst = max(worst, abs(trap - pair))
    assert worst <= 1e-9
    _pass(2, f"1000 instances, max |trapezoid - pairwise| = {worst:.3e} <= 1e-9")


def test_criterion_3_optimizer_exactness():
    """Scalar momentum-update sequence matches hand-computed values to 1e-12."""
    v, w = 0.0, 1.0
    v, w = T.sgd_momentum_step(v, w, grad=0.5, lr=0.1)
    assert abs(v - (-0.05005)) <= 1e-12
    assert abs(w - 0.94995) <= 1e-12
    v2, w2 = T.sgd_momentum_step(v, w, grad=0.5, lr=0.1)
    assert abs(v2 - (-0.0950924975)) <= 1e-12
    assert abs(w2 - 0.8548575025) <= 1e-12
    _pass(3, f"v'={v:.6f}, w'={w:.6f}, v''={v2:.10f}, w''={w2:.10f} all within 1e-12")


def test_criterion_4_gradient_check():
    """Autograd gradients of the cross-entropy head match central finite
    differences within 1e-4 relative error on a toy two-layer network."""
    torch.manual_seed(0)
    net = torch.nn.Sequential(
        torch.nn.Linear(6, 8), torch.nn.ReLU(), torch.nn.Linear(8, 2)
    ).double()
    x = torch.randn(5, 6, dtype=torch.float64)
    y = torch.tensor([1.0, 0.0, 1.0, 1.0, 0.0], dtype=torch.float64)

    def loss_fn():
        p_tb = torch.softmax(net(x), dim=1)[:, 1]
        return T.cross_entropy(p_tb, y)

    loss = loss_fn()
    net.zero_grad()
    loss.backward()

    h = 1e-6
    worst = 0.0
    n_checked = 0
    for param in net.parameters():
        grad = param.grad.clone()
        flat = param.data.view(-1)
        for i in range(flat.numel()):
            orig = flat[i].item()
            flat[i] = orig + h
            up = loss_fn().item()
            flat[i] = orig - h
            down = loss_fn().item()
            flat[i] = orig
            numeric = (up - down) / (2 * h)
            analytic = grad.view(-1)[i].item()
            rel = abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-10)
            worst = max(worst, rel)
            n_checked += 1
    assert worst <= 1e-4
    _pass(4, f"{n_checked} parameters checked, max relative error {worst:.3e} <= 1e-4")


def _shenzhen_available() -> tuple[bool, str]:
    root = Path(SHENZHEN_DIR)
    if not root.is_dir():
        return False, f"Shenzhen images not found at {root} (set TBSCREEN_SHENZHEN_DIR)"
    n = len(list(root.glob("CHNCXR_*_0.png"))) + len(list(root.glob("CHNCXR_*_1.png")))
    if n < 600:
        return False, f"expected ~662 CHNCXR_*.png files under {root}, found {n}"
    try:
        build_classifier("alexnet", pretrained=True)
    except WeightsUnavailableError as exc:
        return False, f"pretrained AlexNet weights unavailable: {exc}"
    return True, ""


@pytest.mark.slow
def test_criterion_5_shenzhen_reproduction(tmp_path):
    """Fine-tune pretrained AlexNet on Shenzhen with the published
    hyperparameters over 3 seeds; median test accuracy >= 0.80 and median
    test AUC >= 0.85."""
    ok, reason = _shenzhen_available()
    if not ok:
        pytest.skip(
            f"criterion 5 requires the public Shenzhen dataset and pretrained weights: {reason}. "
            "Download instructions are in README.md; rerun with TBSCREEN_SHENZHEN_DIR set."
        )
    scan = D.scan_dataset(SHENZHEN_DIR, layout="shenzhen", source="shenzhen")
    manifest = scan.manifest
    accs, aucs = [], []
    for seed in (0, 1, 2):
        split = D.stratified_split(manifest, (0.5, 0.25, 0.25), seed=seed)
        model = build_classifier("alexnet", pretrained=True, head_seed=seed)
        config = T.TrainConfig(seed=seed)  # batch 10, 20 epochs, lr 1e-4
        aug = D.AugmentationConfig(seed=seed)
        run = T.train(
            model, manifest, split, config, aug,
            run_dir=tmp_path / f"shenzhen_seed{seed}", checkpoint_policy="best",
        )
        from tbscreen.models import load_checkpoint

        best = load_checkpoint(run.best_checkpoint)
        ids, labels, scores = T.scores_for_split(best, manifest, split.ids_for("test"))
        cm = M.confusion_matrix(scores, labels, 0.5)
        accs.append(M.metrics(cm).accuracy)
        aucs.append(M.auc_trapezoid(M.roc_curve(scores, labels)))
    med_acc = float(np.median(accs))
    med_auc = float(np.median(aucs))
    assert med_acc >= 0.80, f"median test accuracy {med_acc:.4f} < 0.80 ({accs})"
    assert med_auc >= 0.85, f"median test AUC {med_auc:.4f} < 0.85 ({aucs})"
    _pass(5, f"3-seed medians: accuracy {med_acc:.4f} >= 0.80, AUC {med_auc:.4f} >= 0.85")


def test_criterion_6_overfit_sanity(trainable_dataset, tmp_path):
    """On a 20-image training subset the loop must overfit: epoch-20 mean
    train loss below epoch-1, and 100% train accuracy within 20 epochs.

    Scratch ResNet18 at lr 1e-3 (no pretrained weights are downloadable in
    every environment; the published 1e-4 rate is a fine-tuning rate and
    moves a from-scratch net too slowly to overfit in 20 epochs)."""
    manifest, split = trainable_dataset
    model = build_classifier("resnet18", pretrained=False, head_seed=0)
    config = T.TrainConfig(epochs=20, seed=0, learning_rate=0.001)
    aug = D.AugmentationConfig(seed=0)
    run = T.train(model, manifest, split, config, aug, run_dir=tmp_path, checkpoint_policy="best")
    assert len(run.per_epoch) == 20
    first = run.per_epoch[0]["mean_train_loss"]
    last = run.per_epoch[-1]["mean_train_loss"]
    assert last < first, f"epoch-20 loss {last:.4f} not below epoch-1 loss {first:.4f}"
    # val records mirror the 20 training images un-augmented, so
    # val_accuracy here is exactly train-set accuracy
    hit = [e["epoch"] for e in run.per_epoch if e["val_accuracy"] == 1.0]
    assert hit, f"train accuracy never reached 100% in 20 epochs: {[e['val_accuracy'] for e in run.per_epoch]}"
    _pass(6, f"loss {first:.4f} -> {last:.4f}; 100% train accuracy first reached at epoch {hit[0]}")


def test_criterion_7_cam_properties(alexnet_scratch, tmp_path):
    """Heatmap dims equal input dims with values in [0,1]; strongest
    channel matches brute force on 1000 random stacks; overlay PNGs are
    byte-identical across reruns."""
    img = D.ImageTensor(values=np.random.default_rng(100).random((227, 227, 3)).astype(np.float32))
    heatmap, meta = C.heatmap_for(alexnet_scratch, img)
    assert heatmap.dims == img.dims == (227, 227)
    assert float(heatmap.values.min()) >= 0.0 and float(heatmap.values.max()) <= 1.0

    rng = np.random.default_rng(7)
    for _ in range(1000):
        c = int(rng.integers(1, 16))
        h, w = int(rng.integers(1, 10)), int(rng.integers(1, 10))
        acts = rng.random((c, h, w)).astype(np.float32)
        if rng.random() < 0.1:
            acts[rng.integers(0, c)] = acts[0]  # manufacture ties
        stack = C.FeatureMapStack(activations=acts)
        sums = [float(acts[ch].sum()) for ch in range(c)]
        brute = sums.index(max(sums))
        assert C.strongest_channel(stack) == brute

    C.render_case(alexnet_scratch, img, tmp_path / "r1.png", None, alpha=0.5)
    C.render_case(alexnet_scratch, img, tmp_path / "r2.png", None, alpha=0.5)
    b1 = (tmp_path / "r1.png").read_bytes()
    assert b1 == (tmp_path / "r2.png").read_bytes()
    _pass(7, f"dims/range ok; 1000 stacks match brute force; overlay PNG stable ({len(b1)} bytes)")


def test_criterion_8_augmentation_properties():
    """Double mirror is the identity; impulse translation lands exactly;
    |offset| <= 30 over 1e5 draws; fixed seed reproduces batches."""
    img = D.ImageTensor(values=np.random.default_rng(8).random((64, 64, 3)).astype(np.float32))
    cfg_mirror = D.AugmentationConfig(horizontal_mirror_prob=1.0, max_translate_px=0)
    once = D.augment(img, cfg_mirror, D.rng_for(0, "m"))
    twice = D.augment(once, cfg_mirror, D.rng_for(0, "m"))
    assert np.array_equal(twice.values, img.values)

    vals = np.zeros((224, 224, 3), dtype=np.float32)
    vals[100, 100, :] = 1.0
    shifted = D.translate(vals, 30, 0, 0.0)
    assert np.unravel_index(np.argmax(shifted[:, :, 0]), (224, 224)) == (100, 130)

    cfg = D.AugmentationConfig(max_translate_px=30, seed=1)
    rng = D.rng_for(cfg.seed, "offset-draws")
    offsets = np.array([D.draw_augmentation(cfg, rng)[1:] for _ in range(100_000)])
    assert offsets.min() >= -30 and offsets.max() <= 30
    assert {-30, 30} <= set(offsets.ravel().tolist())  # bounds actually hit

    batch_a = [
        D.augment(img, cfg, D.rng_for(cfg.seed, f"rec{i}", epoch=4)).values for i in range(8)
    ]
    batch_b = [
        D.augment(img, cfg, D.rng_for(cfg.seed, f"rec{i}", epoch=4)).values for i in range(8)
    ]
    assert all(np.array_equal(a, b) for a, b in zip(batch_a, batch_b))
    _pass(8, f"mirror involution, exact impulse shift, 1e5 draws within +/-30, seeded batches identical")


def _free_port() -> int:
    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        return s.getsockname()[1]


def _wait_ready(base: str, timeout: float = 60.0) -> None:
    import httpx

    deadline = time.time() + timeout
    while time.time() < deadline:
        try:
            if httpx.get(base + "/healthz", timeout=2.0).status_code == 200:
                return
        except Exception:
            time.sleep(0.25)
    raise RuntimeError("service did not become ready in time")


def test_criterion_9_service_durability_and_consistency(tmp_path, alexnet_scratch):
    """kill -9 after 100 interleaved case/verdict writes loses nothing;
    live metrics equal the offline evaluator on the exported log for
    thresholds 0.1..0.9."""
    import httpx
    from conftest import write_gray_png

    ckpt = tmp_path / "model.pt"
    save_checkpoint(alexnet_scratch, ckpt)
    data_dir = tmp_path / "store"
    port = _free_port()
    base = f"http://127.0.0.1:{port}"

    def start():
        code = (
            "from tbscreen.service import ServiceConfig, run_server; "
            f"run_server(ServiceConfig(data_dir={str(data_dir)!r}, checkpoint={str(ckpt)!r}, "
            f"port={port}, host='127.0.0.1'))"
        )
        return subprocess.Popen(
            [sys.executable, "-c", code],
            stdout=subprocess.DEVNULL,
            stderr=subprocess.DEVNULL,
        )

    proc = start()
    try:
        _wait_ready(base)
        rng = np.random.default_rng(9)
        case_ids = []
        writes = 0
        decisions = ("confirm_tb", "confirm_healthy", "uncertain")
        k = 0
        while writes < 100:
            arr = (rng.random((48, 48)) * 200).astype(np.uint8)
            if k % 2 == 0:
                arr[10:30, 20:40] = 240
            img_path = tmp_path / "up.png"
            write_gray_png(img_path, arr)
            resp = httpx.post(
                base + "/cases",
                files={"image": ("up.png", img_path.read_bytes(), "image/png")},
                timeout=30.0,
            )
            assert resp.status_code == 201
            case_ids.append(resp.json()["case_id"])
            writes += 1
            k += 1
            if writes < 100 and len(case_ids) >= 2 and k % 3 != 0:
                target = case_ids[int(rng.integers(0, len(case_ids)))]
                decision = decisions[int(rng.integers(0, 3 if k % 5 else 2))]
                resp = httpx.post(
                    base + f"/cases/{target}/verdict", json={"decision": decision}, timeout=10.0
                )
                assert resp.status_code == 200
                writes += 1
        before = httpx.get(base + "/cases", params={"page_size": 500}, timeout=10.0).json()
    finally:
        proc.send_signal(signal.SIGKILL)
        proc.wait()

    proc = start()
    try:
        _wait_ready(base)
        after = httpx.get(base + "/cases", params={"page_size": 500}, timeout=10.0).json()
        assert after["total"] == before["total"] == len(case_ids)
        by_id_before = {c["case_id"]: c for c in before["cases"]}
        by_id_after = {c["case_id"]: c for c in after["cases"]}
        assert by_id_before.keys() == by_id_after.keys()
        for cid, case in by_id_before.items():
            restored = by_id_after[cid]
            assert restored["tb_score"] == case["tb_score"]
            assert restored["status"] == case["status"]
            assert restored["verdict"] == case["verdict"]
            assert restored["history_length"] == case["history_length"]

        events = [
            json.loads(line) for line in (data_dir / "events.jsonl").read_text().splitlines() if line.strip()
        ]
        scores_by_case = {e["case_id"]: e["tb_score"] for e in events if e["event"] == "case_created"}
        last_verdict: dict[str, str] = {}
        for e in events:
            if e["event"] == "verdict_recorded":
                last_verdict[e["case_id"]] = e["decision"]
        scores, labels = [], []
        for cid, decision in last_verdict.items():
            if decision == "confirm_tb":
                scores.append(scores_by_case[cid])
                labels.append(1)
            elif decision == "confirm_healthy":
                scores.append(scores_by_case[cid])
                labels.append(0)

        thresholds = [round(0.1 * i, 1) for i in range(1, 10)]
        for t in thresholds:
            live = httpx.get(base + "/metrics", params={"threshold": t}, timeout=10.0).json()
            cm = M.confusion_matrix(scores, labels, t) if labels else None
            if cm is None:
                assert live["confusion"] is None
                continue
            rep = M.metrics(cm, t)
            assert live["confusion"] == cm.as_dict()
            assert live["sensitivity"] == rep.sensitivity
            assert live["specificity"] == rep.specificity
            assert live["accuracy"] == rep.accuracy
    finally:
        proc.send_signal(signal.SIGKILL)
        proc.wait()
    _pass(
        9,
        f"100 writes survived kill -9 ({len(case_ids)} cases, {100 - len(case_ids)} verdicts); "
        f"live metrics == evaluator at thresholds {thresholds}",
    )
