"""HTTP service over a persistent workspace: matrix records, render jobs,
and detect-and-reconstruct for uploads. Mutations are written to disk before
the response returns; a restart restores the full state from the workspace.
"""

from __future__ import annotations

import base64
import io
import json
import logging
import os
import queue
import secrets
import threading
import time
from contextlib import asynccontextmanager
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from fastapi import FastAPI, File, HTTPException, UploadFile
from fastapi.responses import FileResponse, Response
from PIL import Image

from . import calctrace, gridseg, render
from .detect import plug_detector
from .imgproc import preprocess
from .matrix import MatrixValue

log = logging.getLogger(__name__)


def _atomic_write(path: Path, text: str) -> None:
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "w") as fh:
        fh.write(text)
        fh.flush()
        os.fsync(fh.fileno())
    os.replace(tmp, path)


@dataclass
class MatrixRecord:
    name: str
    values: list[list[int]]
    created_at: float
    source: str = "edited"  # drawn | photo | edited

    @property
    def rows(self) -> int:
        return len(self.values)

    @property
    def cols(self) -> int:
        return len(self.values[0])

    def to_dict(self) -> dict:
        return {"name": self.name, "rows": self.rows, "cols": self.cols,
                "values": self.values, "created_at": self.created_at,
                "source": self.source}


@dataclass
class JobRecord:
    id: str
    mode: str                    # det | add | mul
    operands: list[str]
    state: str = "queued"        # queued | rendering | done | failed
    error: str | None = None
    result: list[list[int]] | int | None = None
    frame_count: int | None = None
    fps: int | None = None
    video: str | None = None
    phases: list[dict] = field(default_factory=list)
    created_at: float = 0.0

    def to_dict(self) -> dict:
        return asdict(self)


def _validate_values(values) -> list[list[int]]:
    if not isinstance(values, list) or not values or not all(isinstance(r, list) for r in values):
        raise ValueError("malformed matrix: values must be a non-empty list of rows")
    width = len(values[0])
    if width == 0 or any(len(r) != width for r in values):
        raise ValueError("malformed matrix: rows have unequal lengths")
    out: list[list[int]] = []
    for row in values:
        clean: list[int] = []
        for v in row:
            if isinstance(v, bool) or not isinstance(v, int):
                raise ValueError("malformed matrix: entries must be integers")
            clean.append(v)
        out.append(clean)
    return out


class Workspace:
    """Disk-backed store for matrix records and render jobs."""

    def __init__(self, root: str | Path):
        self.root = Path(root)
        self.matrices_dir = self.root / "matrices"
        self.jobs_dir = self.root / "jobs"
        self.uploads_dir = self.root / "uploads"
        for d in (self.matrices_dir, self.jobs_dir, self.uploads_dir):
            d.mkdir(parents=True, exist_ok=True)
        self.matrices: dict[str, MatrixRecord] = {}
        self.jobs: dict[str, JobRecord] = {}
        self._lock = threading.RLock()
        self._load()

    def _load(self) -> None:
        for f in sorted(self.matrices_dir.glob("*.json")):
            try:
                d = json.loads(f.read_text())
                record = MatrixRecord(name=d["name"], values=_validate_values(d["values"]),
                                      created_at=float(d.get("created_at", 0.0)),
                                      source=d.get("source", "edited"))
            except Exception as exc:  # noqa: BLE001 - corrupt records never block startup
                log.warning("skipping corrupt matrix record %s: %s", f, exc)
                continue
            self.matrices[record.name] = record
        for job_file in sorted(self.jobs_dir.glob("*/job.json")):
            try:
                d = json.loads(job_file.read_text())
                job = JobRecord(**d)
            except Exception as exc:  # noqa: BLE001
                log.warning("skipping corrupt job record %s: %s", job_file, exc)
                continue
            self.jobs[job.id] = job
        self._write_index()

    def _write_index(self) -> None:
        index = {
            "matrices": sorted(self.matrices),
            "jobs": sorted(self.jobs),
        }
        _atomic_write(self.root / "index.json", json.dumps(index, indent=2))

    def put_matrix(self, name: str, values: list[list[int]], source: str,
                   overwrite: bool) -> MatrixRecord:
        with self._lock:
            if name in self.matrices and not overwrite:
                raise KeyError(name)
            record = MatrixRecord(name=name, values=values,
                                  created_at=time.time(), source=source)
            _atomic_write(self.matrices_dir / f"{name}.json",
                          json.dumps(record.to_dict(), indent=2))
            self.matrices[name] = record
            self._write_index()
            return record

    def save_job(self, job: JobRecord) -> None:
        with self._lock:
            job_dir = self.jobs_dir / job.id
            job_dir.mkdir(parents=True, exist_ok=True)
            _atomic_write(job_dir / "job.json", json.dumps(job.to_dict(), indent=2))
            self.jobs[job.id] = job
            self._write_index()

    def frames_dir(self, job_id: str) -> Path:
        return self.jobs_dir / job_id / "frames"


class RenderWorker:
    """Single background renderer; jobs queue and run off the request path."""

    def __init__(self, workspace: Workspace, style: render.Style):
        self.workspace = workspace
        self.style = style
        self.queue: "queue.Queue[str | None]" = queue.Queue()
        self.thread = threading.Thread(target=self._run, name="render-worker", daemon=True)

    def start(self) -> None:
        self.thread.start()

    def stop(self) -> None:
        self.queue.put(None)
        self.thread.join(timeout=10)

    def submit(self, job_id: str) -> None:
        self.queue.put(job_id)

    def _run(self) -> None:
        while True:
            job_id = self.queue.get()
            if job_id is None:
                return
            job = self.workspace.jobs.get(job_id)
            if job is None:
                continue
            try:
                self._render_job(job)
            except Exception as exc:  # noqa: BLE001 - job failures must not kill the worker
                job.state = "failed"
                job.error = str(exc)
                self.workspace.save_job(job)

    def _render_job(self, job: JobRecord) -> None:
        job.state = "rendering"
        self.workspace.save_job(job)

        operands = [MatrixValue.from_lists(self.workspace.matrices[n].values)
                    for n in job.operands]
        trace = calctrace.build_trace(job.mode, *operands)
        report = calctrace.verify_trace(trace)
        if not report.passed:
            raise RuntimeError("trace failed verification; frames withheld")

        fplan = render.plan(trace, self.style)
        want_png = render.resolve_encoder() is not None
        manifest = render.render_sequence(fplan, self.workspace.frames_dir(job.id),
                                          png=want_png)
        video = None
        if want_png:
            encoded = render.encode(manifest)
            if encoded["status"] == "ok":
                video = encoded["video"]

        job.result = trace.result.to_lists() if isinstance(trace.result, MatrixValue) \
            else int(trace.result)
        job.frame_count = fplan.frame_count
        job.fps = fplan.fps
        job.video = video
        job.phases = [
            {"kind": p.kind, "step": p.step_index,
             "frames": [p.frame_start, p.frame_end]}
            for p in fplan.phases
        ]
        job.state = "done"
        self.workspace.save_job(job)


MODE_ARITY = {"det": 1, "add": 2, "mul": 2}


def create_app(workspace_dir: str | Path, detector: str = "oracle",
               style: render.Style | None = None, ui_dir: str | Path | None = None,
               extra_detectors: dict[str, str] | None = None) -> FastAPI:
    """Service over a workspace; `detector` names the default detect backend."""
    style = style or render.Style()
    workspace = Workspace(workspace_dir)
    worker = RenderWorker(workspace, style)

    detector_names: dict[str, str] = {"oracle": "oracle"}
    if detector != "oracle":
        detector_names["default"] = detector
    for key, spec_name in (extra_detectors or {}).items():
        detector_names[key] = spec_name
    default_key = "default" if "default" in detector_names else "oracle"

    @asynccontextmanager
    async def lifespan(app: FastAPI):
        for job in workspace.jobs.values():
            if job.state in ("queued", "rendering"):
                job.state = "queued"
                workspace.save_job(job)
                worker.submit(job.id)
        worker.start()
        yield
        worker.stop()

    app = FastAPI(title="matrixlens", lifespan=lifespan)
    app.state.workspace = workspace
    app.state.worker = worker

    @app.get("/api/detectors")
    def list_detectors() -> dict:
        return {"detectors": sorted(detector_names), "default": default_key}

    @app.post("/api/detect")
    async def detect_image(image: UploadFile = File(...), detector: str | None = None) -> dict:
        key = detector or default_key
        if key not in detector_names:
            raise HTTPException(404, f"unknown detector {key!r}")
        handle = plug_detector(detector_names[key])

        data = await image.read()
        stem = Path(image.filename or "upload").stem or "upload"
        upload_path = workspace.uploads_dir / f"{stem}.png"
        try:
            with Image.open(io.BytesIO(data)) as im:
                pixels = np.asarray(im.convert("RGB"), dtype=np.uint8)
                Image.fromarray(pixels).save(upload_path)
        except Exception as exc:
            raise HTTPException(400, f"unreadable image: {exc}") from exc

        warnings: list[str] = []
        roi_rect = None
        roi_b64 = None
        try:
            prep = preprocess(pixels)
            roi_rect = prep.rect
            buf = io.BytesIO()
            Image.fromarray(prep.roi).save(buf, format="PNG")
            roi_b64 = base64.b64encode(buf.getvalue()).decode("ascii")
        except Exception as exc:  # noqa: BLE001 - preview is best-effort
            warnings.append(f"preprocess failed: {exc}")

        matrix = None
        detections: list[dict] = []
        try:
            dset = handle.detect(upload_path).to_pixels()
            detections = [
                {"class_id": d.class_id, "confidence": d.confidence,
                 "cx": d.cx, "cy": d.cy, "w": d.w, "h": d.h}
                for d in dset.detections
            ]
            report = gridseg.reconstruct(dset)
            warnings.extend(report.warnings)
            matrix = {"rows": report.matrix.rows, "cols": report.matrix.cols,
                      "values": report.matrix.to_lists()}
        except FileNotFoundError as exc:
            warnings.append(str(exc))
        except gridseg.ReconstructionError as exc:
            warnings.extend(exc.warnings)
            warnings.append(str(exc))

        return {"roi": roi_rect, "roi_png_base64": roi_b64,
                "detections": detections, "matrix": matrix, "warnings": warnings}

    @app.get("/api/matrices")
    def list_matrices() -> dict:
        records = sorted(workspace.matrices.values(), key=lambda r: r.name)
        return {"matrices": [r.to_dict() for r in records]}

    @app.get("/api/matrices/{name}")
    def get_matrix(name: str) -> dict:
        record = workspace.matrices.get(name)
        if record is None:
            raise HTTPException(404, f"unknown matrix {name!r}")
        return record.to_dict()

    @app.put("/api/matrices/{name}", status_code=200)
    def put_matrix(name: str, body: dict) -> dict:
        if not name or "/" in name or name != name.strip():
            raise HTTPException(400, "malformed matrix name")
        try:
            values = _validate_values(body.get("values"))
        except ValueError as exc:
            raise HTTPException(400, str(exc)) from exc
        source = body.get("source", "edited")
        if source not in ("drawn", "photo", "edited"):
            raise HTTPException(400, f"unknown source {source!r}")
        try:
            record = workspace.put_matrix(name, values, source,
                                          overwrite=bool(body.get("overwrite", False)))
        except KeyError:
            raise HTTPException(409, f"matrix {name!r} already exists") from None
        return record.to_dict()

    @app.post("/api/jobs", status_code=201)
    def post_job(body: dict) -> dict:
        mode = body.get("mode")
        operands = body.get("operands", [])
        if mode not in MODE_ARITY:
            raise HTTPException(422, f"unknown mode {mode!r}")
        if len(operands) != MODE_ARITY[mode]:
            raise HTTPException(
                422, f"mode {mode!r} takes {MODE_ARITY[mode]} operand(s), got {len(operands)}")
        matrices = []
        for name in operands:
            record = workspace.matrices.get(name)
            if record is None:
                raise HTTPException(404, f"unknown matrix {name!r}")
            matrices.append(MatrixValue.from_lists(record.values))
        try:
            calctrace.build_trace(mode, *matrices)
        except ValueError as exc:
            raise HTTPException(422, str(exc)) from exc

        job = JobRecord(id=secrets.token_hex(6), mode=mode, operands=list(operands),
                        created_at=time.time())
        workspace.save_job(job)
        worker.submit(job.id)
        return job.to_dict()

    @app.get("/api/jobs")
    def list_jobs() -> dict:
        jobs = sorted(workspace.jobs.values(), key=lambda j: j.created_at)
        return {"jobs": [j.to_dict() for j in jobs]}

    @app.get("/api/jobs/{job_id}")
    def get_job(job_id: str) -> dict:
        job = workspace.jobs.get(job_id)
        if job is None:
            raise HTTPException(404, f"unknown job {job_id!r}")
        return job.to_dict()

    @app.get("/api/jobs/{job_id}/frames/{n}")
    def get_frame(job_id: str, n: int) -> Response:
        job = workspace.jobs.get(job_id)
        if job is None:
            raise HTTPException(404, f"unknown job {job_id!r}")
        if job.state != "done":
            raise HTTPException(404, f"job {job_id!r} is {job.state}, frames not available")
        frame = workspace.frames_dir(job_id) / f"frame_{n:06d}.svg"
        if not frame.is_file():
            raise HTTPException(404, f"frame {n} out of range")
        return Response(frame.read_text(), media_type="image/svg+xml")

    @app.get("/api/jobs/{job_id}/video")
    def get_video(job_id: str) -> FileResponse:
        job = workspace.jobs.get(job_id)
        if job is None:
            raise HTTPException(404, f"unknown job {job_id!r}")
        if job.video is None or not Path(job.video).is_file():
            raise HTTPException(404, "video not available (encoder unavailable or job unfinished)")
        return FileResponse(job.video, media_type="video/mp4")

    if ui_dir is not None and Path(ui_dir).is_dir():
        from fastapi.staticfiles import StaticFiles
        app.mount("/", StaticFiles(directory=str(ui_dir), html=True), name="ui")

    return app
