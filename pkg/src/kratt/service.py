"""Job-based HTTP API around the indexing pipeline: submit a book, poll progress
through the workflow steps, fetch re-thresholdable results, export MARC21.

Results are stored at threshold 0 so threshold changes are pure filters and
never trigger recomputation. Jobs live in process; an in-process worker pool
replaces any external broker, and completed jobs are kept for 24 hours.
"""

from __future__ import annotations

import datetime
import email.parser
import email.policy
import json
import tempfile
import threading
import time
import urllib.request
import uuid
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse, PlainTextResponse

from .bundle import ModelBundle
from .pipeline import (IndexingConfig, IndexingOutcome, apply_threshold,
                       index_book, load_book_source, outcome_to_json_dict,
                       to_marc21)

JOB_STATES = ("queued", "running", "done", "failed")

DEFAULT_QUEUE_DEPTH = 32
DEFAULT_RETENTION_HOURS = 24.0


@dataclass
class Job:
    id: str
    state: str = "queued"
    step: str = "converting"
    submitted_at: float = field(default_factory=time.time)
    finished_at: float | None = None
    cfg: IndexingConfig = field(default_factory=IndexingConfig)
    outcome: IndexingOutcome | None = None  # stored at threshold 0
    error: str | None = None
    step_log: list[str] = field(default_factory=list)


def _iso(ts: float | None) -> str | None:
    if ts is None:
        return None
    return datetime.datetime.fromtimestamp(ts, datetime.timezone.utc) \
        .isoformat(timespec="milliseconds")


class JobStore:
    """Thread-safe job table with lazy retention-based purging."""

    def __init__(self, retention_hours: float = DEFAULT_RETENTION_HOURS):
        self._jobs: dict[str, Job] = {}
        self._lock = threading.RLock()
        self._retention = retention_hours * 3600.0

    def create(self, cfg: IndexingConfig) -> Job:
        job = Job(id=uuid.uuid4().hex, cfg=cfg)
        with self._lock:
            self._purge()
            self._jobs[job.id] = job
        return job

    def get(self, job_id: str) -> Job | None:
        with self._lock:
            self._purge()
            return self._jobs.get(job_id)

    def active_count(self) -> int:
        with self._lock:
            return sum(1 for j in self._jobs.values()
                       if j.state in ("queued", "running"))

    def update(self, job_id: str, **changes) -> None:
        with self._lock:
            job = self._jobs.get(job_id)
            if job is None:
                return
            for key, value in changes.items():
                setattr(job, key, value)

    def advance_step(self, job_id: str, step: str) -> None:
        with self._lock:
            job = self._jobs.get(job_id)
            if job is None:
                return
            job.step = step
            job.step_log.append(step)

    def _purge(self) -> None:
        now = time.time()
        stale = [jid for jid, job in self._jobs.items()
                 if job.finished_at and now - job.finished_at > self._retention]
        for jid in stale:
            del self._jobs[jid]


def _parse_multipart(body: bytes, content_type: str) -> dict[str, tuple[str | None, bytes]]:
    """Form fields from a multipart/form-data body: name -> (filename, value)."""
    header = f"Content-Type: {content_type}\r\n\r\n".encode("latin-1")
    message = email.parser.BytesParser(policy=email.policy.HTTP).parsebytes(header + body)
    if not message.is_multipart():
        raise ValueError("body is not multipart/form-data")
    fields: dict[str, tuple[str | None, bytes]] = {}
    for part in message.iter_parts():
        name = part.get_param("name", header="content-disposition")
        if not name:
            continue
        payload = part.get_payload(decode=True) or b""
        fields[str(name)] = (part.get_filename(), payload)
    return fields


def _job_status_dict(job: Job) -> dict:
    return {
        "id": job.id,
        "state": job.state,
        "step": job.step,
        "submitted_at": _iso(job.submitted_at),
        "finished_at": _iso(job.finished_at),
        "cfg": {
            "pages_n": job.cfg.pages_n,
            "buffer": job.cfg.buffer,
            "seed": job.cfg.seed,
        },
        "error": job.error,
    }


def create_app(bundle: ModelBundle,
               defaults: IndexingConfig | None = None,
               workers: int | None = None,
               queue_depth: int = DEFAULT_QUEUE_DEPTH,
               retention_hours: float = DEFAULT_RETENTION_HOURS,
               ui_dir: str | Path | None = None,
               index_fn: Callable | None = None) -> FastAPI:
    """Build the API app around a loaded model bundle.

    index_fn exists for tests that need to control job execution timing.
    """
    defaults = defaults or IndexingConfig()
    store = JobStore(retention_hours)
    executor = ThreadPoolExecutor(max_workers=workers or 4)
    run_index = index_fn or index_book
    app = FastAPI(title="kratt", docs_url=None, redoc_url=None)

    def _execute(job_id: str, source_path: str | None, url: str | None,
                 cfg: IndexingConfig) -> None:
        store.update(job_id, state="running")
        try:
            path = source_path
            if url is not None:
                suffix = Path(url.split("?")[0]).suffix or ".txt"
                with urllib.request.urlopen(url, timeout=60) as resp:
                    data = resp.read()
                with tempfile.NamedTemporaryFile(suffix=suffix, delete=False) as tmp:
                    tmp.write(data)
                    path = tmp.name
            book = load_book_source(path)
            outcome = run_index(bundle, book, replace(cfg, threshold=0),
                                progress=lambda s: store.advance_step(job_id, s))
            store.update(job_id, state="done", step="finished",
                         outcome=outcome, finished_at=time.time())
        except Exception as exc:  # surfaced to the client via job state
            store.update(job_id, state="failed", error=str(exc),
                         finished_at=time.time())
        finally:
            if source_path:
                Path(source_path).unlink(missing_ok=True)

    @app.get("/api/health")
    def health() -> dict:
        return {"status": "ok", "model_version": bundle.model_version,
                "labels": len(bundle.vocabulary)}

    @app.post("/api/jobs")
    async def submit(request: Request):
        content_type = request.headers.get("content-type", "")
        body = await request.body()
        source_path: str | None = None
        url: str | None = None
        overrides: dict = {}

        if content_type.startswith("multipart/form-data"):
            try:
                fields = _parse_multipart(body, content_type)
            except Exception as exc:
                return JSONResponse({"error": f"bad multipart body: {exc}"}, 400)
            if "book" not in fields:
                return JSONResponse({"error": "multipart field 'book' is required"}, 400)
            filename, data = fields["book"]
            if not data:
                return JSONResponse({"error": "uploaded book is empty"}, 400)
            suffix = Path(filename or "book.txt").suffix or ".txt"
            with tempfile.NamedTemporaryFile(suffix=suffix, delete=False) as tmp:
                tmp.write(data)
                source_path = tmp.name
            for key in ("pages_n", "seed"):
                if key in fields:
                    overrides[key] = fields[key][1].decode("utf-8")
        elif content_type.startswith("application/json"):
            try:
                payload = json.loads(body)
            except ValueError:
                return JSONResponse({"error": "invalid JSON body"}, 400)
            url = payload.get("url")
            if not url:
                return JSONResponse({"error": "JSON body requires 'url'"}, 400)
            for key in ("pages_n", "seed"):
                if key in payload and payload[key] is not None:
                    overrides[key] = payload[key]
        else:
            return JSONResponse(
                {"error": "expected multipart/form-data or application/json"}, 415)

        try:
            cfg = replace(
                defaults,
                pages_n=int(overrides.get("pages_n", defaults.pages_n)),
                seed=int(overrides.get("seed", defaults.seed)),
            )
        except (TypeError, ValueError):
            return JSONResponse({"error": "pages_n and seed must be integers"}, 400)

        if store.active_count() >= queue_depth:
            return JSONResponse({"error": "job queue is full, retry later"}, 429)
        job = store.create(cfg)
        executor.submit(_execute, job.id, source_path, url, cfg)
        return JSONResponse({"id": job.id}, 202)

    @app.get("/api/jobs/{job_id}")
    def job_status(job_id: str):
        job = store.get(job_id)
        if job is None:
            return JSONResponse({"error": f"unknown job {job_id!r}"}, 404)
        return _job_status_dict(job)

    @app.get("/api/jobs/{job_id}/result")
    def job_result(job_id: str, threshold: str | None = None):
        job = store.get(job_id)
        if job is None:
            return JSONResponse({"error": f"unknown job {job_id!r}"}, 404)
        if job.state == "failed":
            return JSONResponse({"error": job.error or "job failed",
                                 "state": "failed"}, 400)
        if job.state != "done" or job.outcome is None:
            return JSONResponse({"error": "job not finished",
                                 "state": job.state}, 409)
        theta = threshold if threshold is not None else "0.4"
        try:
            filtered = apply_threshold(job.outcome.keywords, theta)
        except (ValueError, ZeroDivisionError):
            return JSONResponse({"error": f"bad threshold {theta!r}"}, 400)
        view = replace(job.outcome, keywords=filtered)
        return outcome_to_json_dict(view, include_timing=True)

    @app.post("/api/jobs/{job_id}/marc")
    async def export_marc(job_id: str, request: Request):
        job = store.get(job_id)
        if job is None:
            return JSONResponse({"error": f"unknown job {job_id!r}"}, 404)
        if job.state != "done" or job.outcome is None:
            return JSONResponse({"error": "job not finished", "state": job.state}, 409)
        try:
            payload = json.loads(await request.body())
            terms = payload["terms"]
            assert isinstance(terms, list)
        except Exception:
            return JSONResponse({"error": "body must be JSON {\"terms\": [...]}"}, 400)
        by_term = {kw.term: kw for kw in job.outcome.keywords}
        unknown = [t for t in terms if t not in by_term]
        if unknown:
            return JSONResponse(
                {"error": f"terms not predicted for this job: {unknown[:5]}"}, 422)
        return PlainTextResponse(to_marc21([by_term[t] for t in terms]))

    if ui_dir is not None and Path(ui_dir).is_dir():
        from fastapi.staticfiles import StaticFiles
        app.mount("/ui", StaticFiles(directory=str(ui_dir), html=True), name="ui")

    app.state.store = store  # exposed for tests
    app.state.executor = executor
    return app
