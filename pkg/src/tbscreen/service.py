"""HTTP screening service: score submitted chest X-rays, keep a reviewable
worklist, record verdicts, and report live operating-point metrics.

Persistence is an append-only JSON-lines event log (case_created,
heatmap_ready, verdict_recorded). Every acknowledged write is flushed and
fsynced before the response returns; startup replays the log to rebuild
the in-memory index, so a kill -9 at any point loses at most an
unacknowledged partial line (which replay skips).
"""

from __future__ import annotations

import datetime as dt
import io
import json
import os
import threading
import uuid
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Literal, Optional

from fastapi import FastAPI, File, Form, Header, HTTPException, UploadFile
from fastapi.responses import FileResponse, JSONResponse
from fastapi.staticfiles import StaticFiles
from PIL import Image
from pydantic import BaseModel

from . import metrics as M
from .cam import heatmap_for, overlay, save_overlay_png
from .data import CxrRecord, load_and_resize
from .models import ClassifierModel, load_checkpoint, predict

DECISIONS = ("confirm_tb", "confirm_healthy", "uncertain")


@dataclass
class ServiceConfig:
    data_dir: str = "screening_data"
    checkpoint: str | None = None
    port: int = 8000
    host: str = "127.0.0.1"
    threshold: float = 0.5
    ui_dir: str | None = None
    heatmap_mode: str = "sync"  # sync | queued
    heatmap_alpha: float = 1.0  # pure colormap; the UI blends client-side

    @classmethod
    def from_sources(cls, config_file: str | None = None, env: dict | None = None, **overrides) -> "ServiceConfig":
        """File values, then TBSCREEN_* environment overrides, then kwargs."""
        env = os.environ if env is None else env
        values: dict = {}
        if config_file:
            with open(config_file) as fh:
                values.update(json.load(fh))
        env_map = {
            "TBSCREEN_DATA_DIR": ("data_dir", str),
            "TBSCREEN_CHECKPOINT": ("checkpoint", str),
            "TBSCREEN_PORT": ("port", int),
            "TBSCREEN_HOST": ("host", str),
            "TBSCREEN_THRESHOLD": ("threshold", float),
            "TBSCREEN_UI_DIR": ("ui_dir", str),
            "TBSCREEN_HEATMAP_MODE": ("heatmap_mode", str),
        }
        for var, (key, cast) in env_map.items():
            if var in env and env[var] != "":
                values[key] = cast(env[var])
        values.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**values)


def _utcnow() -> str:
    return dt.datetime.now(dt.timezone.utc).isoformat()


@dataclass
class Case:
    case_id: str
    image_ref: str
    tb_score: float
    predicted: str
    created_at: str
    source: str = "other"
    heatmap_ref: str | None = None
    verdicts: list[dict] = field(default_factory=list)

    @property
    def status(self) -> str:
        return "reviewed" if self.verdicts else "pending"

    def as_dict(self) -> dict:
        return {
            "case_id": self.case_id,
            "image_ref": self.image_ref,
            "tb_score": self.tb_score,
            "predicted": self.predicted,
            "created_at": self.created_at,
            "source": self.source,
            "heatmap_ref": self.heatmap_ref,
            "status": self.status,
            "verdict": self.verdicts[-1] if self.verdicts else None,
            "history_length": len(self.verdicts),
        }


class CaseStore:
    """Event-sourced case index over an append-only JSONL log."""

    def __init__(self, data_dir: str | Path):
        self.data_dir = Path(data_dir)
        self.images_dir = self.data_dir / "images"
        self.heatmaps_dir = self.data_dir / "heatmaps"
        for d in (self.data_dir, self.images_dir, self.heatmaps_dir):
            d.mkdir(parents=True, exist_ok=True)
        self.log_path = self.data_dir / "events.jsonl"
        self._lock = threading.Lock()
        self.cases: dict[str, Case] = {}
        self._replay()

    def _replay(self) -> None:
        if not self.log_path.exists():
            return
        with open(self.log_path) as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                try:
                    event = json.loads(line)
                except json.JSONDecodeError:
                    continue  # torn tail write from a crash; never acknowledged
                self._apply(event)

    def _apply(self, event: dict) -> None:
        kind = event.get("event")
        if kind == "case_created":
            case = Case(
                case_id=event["case_id"],
                image_ref=event["image_ref"],
                tb_score=float(event["tb_score"]),
                predicted=event["predicted"],
                created_at=event["created_at"],
                source=event.get("source", "other"),
            )
            self.cases[case.case_id] = case
        elif kind == "heatmap_ready":
            case = self.cases.get(event["case_id"])
            if case is not None:
                case.heatmap_ref = event["heatmap_ref"]
        elif kind == "verdict_recorded":
            case = self.cases.get(event["case_id"])
            if case is not None:
                case.verdicts.append(
                    {
                        "decision": event["decision"],
                        "reviewer": event.get("reviewer", ""),
                        "recorded_at": event["recorded_at"],
                    }
                )

    def append(self, event: dict) -> None:
        """Serialized, durable append: visible after any restart."""
        with self._lock:
            with open(self.log_path, "a") as fh:
                fh.write(json.dumps(event, sort_keys=True) + "\n")
                fh.flush()
                os.fsync(fh.fileno())
            self._apply(event)

    def list_cases(self, status: str = "all") -> list[Case]:
        cases = list(self.cases.values())
        if status in ("pending", "reviewed"):
            cases = [c for c in cases if c.status == status]
        elif status != "all":
            raise ValueError(f"unknown status filter {status!r}")
        # triage order: pending first, riskiest first, then stable tiebreak
        cases.sort(key=lambda c: (c.status != "pending", -c.tb_score, c.created_at, c.case_id))
        return cases

    def reviewed_scores_and_labels(self) -> tuple[list[float], list[int], int]:
        """(tb_score, verdict label) pairs over definite verdicts; the
        third value counts reviewed-but-uncertain cases left out."""
        scores: list[float] = []
        labels: list[int] = []
        uncertain = 0
        for case in self.cases.values():
            if not case.verdicts:
                continue
            decision = case.verdicts[-1]["decision"]
            if decision == "confirm_tb":
                scores.append(case.tb_score)
                labels.append(1)
            elif decision == "confirm_healthy":
                scores.append(case.tb_score)
                labels.append(0)
            else:
                uncertain += 1
        return scores, labels, uncertain


class VerdictBody(BaseModel):
    decision: Literal["confirm_tb", "confirm_healthy", "uncertain"]
    reviewer: str = ""


def _decode_or_415(data: bytes) -> Image.Image:
    if not data:
        raise HTTPException(status_code=415, detail="empty upload; expected a PNG or JPEG image")
    try:
        im = Image.open(io.BytesIO(data))
        im.load()
        return im
    except Exception as exc:
        raise HTTPException(status_code=415, detail=f"upload is not a decodable image: {exc}") from exc


def create_app(config: ServiceConfig, model: ClassifierModel | None = None) -> FastAPI:
    """Build the service; loads the checkpoint unless a model is injected."""
    store = CaseStore(config.data_dir)
    if model is None and config.checkpoint:
        model = load_checkpoint(config.checkpoint)

    app = FastAPI(title="tbscreen screening service")
    app.state.store = store
    app.state.model = model
    app.state.config = config
    executor = ThreadPoolExecutor(max_workers=1) if config.heatmap_mode == "queued" else None

    def _compute_heatmap(case_id: str, image_path: Path) -> None:
        record = _record_for(case_id, image_path)
        image = load_and_resize(record, model.spec.input_dims)
        heatmap, _meta = heatmap_for(model, image, mode="strongest_channel")
        rendered = overlay(image, heatmap, alpha=config.heatmap_alpha)
        out = store.heatmaps_dir / f"{case_id}.png"
        save_overlay_png(out, rendered)
        store.append({"event": "heatmap_ready", "case_id": case_id, "heatmap_ref": str(out.relative_to(store.data_dir))})

    def _record_for(case_id: str, image_path: Path) -> CxrRecord:
        with Image.open(image_path) as im:
            w, h = im.size
        return CxrRecord(id=case_id, image_path=str(image_path), label="healthy", source="other", width_px=w, height_px=h)

    @app.post("/cases", status_code=201)
    async def submit_case(
        image: UploadFile = File(...),
        source: str = Form("other"),
    ):
        if model is None:
            raise HTTPException(status_code=503, detail="service not ready: no model checkpoint loaded")
        data = await image.read()
        decoded = _decode_or_415(data)

        case_id = uuid.uuid4().hex
        image_path = store.images_dir / f"{case_id}.png"
        if decoded.mode in ("I", "I;16", "I;16B", "I;16L"):
            decoded.convert("I;16").save(image_path, format="PNG")
        else:
            decoded.convert("RGB").save(image_path, format="PNG")

        record = _record_for(case_id, image_path)
        tensor = load_and_resize(record, model.spec.input_dims)
        p_healthy, p_tb = predict(model, tensor)
        predicted = "tb" if p_tb >= config.threshold else "healthy"

        store.append(
            {
                "event": "case_created",
                "case_id": case_id,
                "image_ref": str(image_path.relative_to(store.data_dir)),
                "tb_score": p_tb,
                "predicted": predicted,
                "source": source,
                "created_at": _utcnow(),
            }
        )
        if executor is not None:
            executor.submit(_compute_heatmap, case_id, image_path)
        else:
            _compute_heatmap(case_id, image_path)
        return store.cases[case_id].as_dict()

    @app.get("/cases")
    def list_cases(status: str = "all", page: int = 1, page_size: int = 50):
        if page < 1 or page_size < 1:
            raise HTTPException(status_code=400, detail="page and page_size must be >= 1")
        try:
            cases = store.list_cases(status)
        except ValueError as exc:
            raise HTTPException(status_code=400, detail=str(exc)) from exc
        total = len(cases)
        start = (page - 1) * page_size
        page_cases = cases[start : start + page_size]
        return {
            "cases": [c.as_dict() for c in page_cases],
            "total": total,
            "page": page,
            "page_size": page_size,
            "pages": (total + page_size - 1) // page_size if total else 0,
        }

    @app.get("/cases/{case_id}")
    def get_case(case_id: str):
        case = store.cases.get(case_id)
        if case is None:
            raise HTTPException(status_code=404, detail=f"unknown case {case_id}")
        payload = case.as_dict()
        payload["history"] = case.verdicts
        return payload

    @app.get("/cases/{case_id}/image.png")
    def get_image(case_id: str):
        case = store.cases.get(case_id)
        if case is None:
            raise HTTPException(status_code=404, detail=f"unknown case {case_id}")
        path = store.data_dir / case.image_ref
        if not path.exists():
            raise HTTPException(status_code=404, detail="image file missing")
        return FileResponse(path, media_type="image/png")

    @app.get("/cases/{case_id}/heatmap.png")
    def get_heatmap(case_id: str):
        case = store.cases.get(case_id)
        if case is None:
            raise HTTPException(status_code=404, detail=f"unknown case {case_id}")
        if case.heatmap_ref is None:
            raise HTTPException(status_code=404, detail="heatmap not ready")
        path = store.data_dir / case.heatmap_ref
        if not path.exists():
            raise HTTPException(status_code=404, detail="heatmap file missing")
        return FileResponse(path, media_type="image/png")

    @app.post("/cases/{case_id}/verdict")
    def record_verdict(case_id: str, body: VerdictBody, x_reviewer: Optional[str] = Header(default=None)):
        case = store.cases.get(case_id)
        if case is None:
            raise HTTPException(status_code=404, detail=f"unknown case {case_id}")
        store.append(
            {
                "event": "verdict_recorded",
                "case_id": case_id,
                "decision": body.decision,
                "reviewer": body.reviewer or x_reviewer or "",
                "recorded_at": _utcnow(),
            }
        )
        return store.cases[case_id].as_dict()

    @app.get("/metrics")
    def live_metrics(threshold: float | None = None):
        t = config.threshold if threshold is None else threshold
        scores, labels, uncertain = store.reviewed_scores_and_labels()
        counts = {
            "reviewed": sum(1 for c in store.cases.values() if c.verdicts),
            "definite": len(labels),
            "excluded_uncertain": uncertain,
        }
        if not labels:
            return {
                "threshold": t,
                "sensitivity": None,
                "specificity": None,
                "accuracy": None,
                "confusion": None,
                "counts": counts,
                "note": "no definite verdicts yet; metrics undefined",
            }
        cm = M.confusion_matrix(scores, labels, t)
        rep = M.metrics(cm, t)
        return {
            "threshold": t,
            "sensitivity": rep.sensitivity,
            "specificity": rep.specificity,
            "accuracy": rep.accuracy,
            "confusion": cm.as_dict(),
            "counts": counts,
        }

    @app.get("/roc")
    def roc_endpoint():
        scores, labels, _ = store.reviewed_scores_and_labels()
        if not labels or len(set(labels)) < 2:
            missing = "tb" if 1 not in labels else "healthy"
            return JSONResponse(
                status_code=409,
                content={"detail": f"ROC requires reviewed cases of both classes; missing {missing}"},
            )
        curve = M.roc_curve(scores, labels)
        return {
            "points": [list(p) for p in curve.points],
            "auc": M.auc_trapezoid(curve),
            "n_definite": len(labels),
        }

    @app.get("/healthz")
    def healthz():
        return {
            "status": "ok",
            "model_loaded": model is not None,
            "backbone": model.spec.name if model else None,
            "cases": len(store.cases),
        }

    ui_dir = config.ui_dir
    if ui_dir is None:
        default_ui = Path(__file__).resolve().parents[2] / "frontend" / "dist"
        ui_dir = str(default_ui) if default_ui.is_dir() else None
    if ui_dir and Path(ui_dir).is_dir():
        app.mount("/", StaticFiles(directory=ui_dir, html=True), name="ui")

    return app


def run_server(config: ServiceConfig, model: ClassifierModel | None = None) -> None:
    import uvicorn

    app = create_app(config, model=model)
    uvicorn.run(app, host=config.host, port=config.port, log_level="info")
