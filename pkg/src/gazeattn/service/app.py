"""HTTP service. Long operations (train, sweep) run as background jobs on a
single worker so only one run mutates parameters at a time."""
from __future__ import annotations

import threading
import traceback
import uuid
from concurrent.futures import ThreadPoolExecutor
from typing import Callable

from fastapi import FastAPI, HTTPException

from ..harness.training import MetricsReport
from . import handlers
from . import schemas as s


class JobManager:
    def __init__(self, workers: int = 1):
        self._pool = ThreadPoolExecutor(max_workers=workers)
        self._jobs: dict[str, s.JobStatus] = {}
        self._lock = threading.Lock()

    def submit(self, kind: str, fn: Callable, request) -> s.JobStatus:
        job = s.JobStatus(id=uuid.uuid4().hex[:12], kind=kind, state="queued")
        with self._lock:
            self._jobs[job.id] = job
        self._pool.submit(self._run, job.id, fn, request)
        return job

    def _run(self, job_id: str, fn: Callable, request) -> None:
        self._update(job_id, state="running")
        try:
            result = fn(request)
            self._update(job_id, state="done", result=result.model_dump(mode="json"))
        except Exception as exc:  # reported through the job status
            self._update(job_id, state="failed", error=f"{type(exc).__name__}: {exc}\n{traceback.format_exc()}")

    def _update(self, job_id: str, **changes) -> None:
        with self._lock:
            self._jobs[job_id] = self._jobs[job_id].model_copy(update=changes)

    def get(self, job_id: str) -> s.JobStatus:
        with self._lock:
            if job_id not in self._jobs:
                raise KeyError(job_id)
            return self._jobs[job_id]

    def all(self) -> list[s.JobStatus]:
        with self._lock:
            return list(self._jobs.values())


def _bad_request(fn: Callable, request):
    try:
        return fn(request)
    except (ValueError, FileNotFoundError) as exc:
        raise HTTPException(status_code=400, detail=str(exc)) from exc


def create_app() -> FastAPI:
    app = FastAPI(title="gazeattn", version="0.1.0")
    jobs = JobManager()
    app.state.jobs = jobs

    @app.get("/health")
    def health():
        return {"status": "ok"}

    @app.post("/make-data", response_model=s.MakeDataResponse)
    def make_data(req: s.MakeDataRequest):
        return _bad_request(handlers.make_data, req)

    @app.post("/gaze-prep", response_model=s.GazePrepResponse)
    def gaze_prep(req: s.GazePrepRequest):
        return _bad_request(handlers.gaze_prep, req)

    @app.post("/eval", response_model=MetricsReport)
    def evaluate(req: s.EvalRequest):
        return _bad_request(handlers.eval_run, req)

    @app.post("/report", response_model=s.ReportResponse)
    def report(req: s.ReportRequest):
        return _bad_request(handlers.report, req)

    @app.post("/summary")
    def summary(req: s.SummaryRequest):
        return _bad_request(handlers.summary, req)

    @app.post("/train", response_model=s.JobStatus)
    def train(req: s.TrainRequest):
        return jobs.submit("train", handlers.train_run, req)

    @app.post("/sweep", response_model=s.JobStatus)
    def sweep(req: s.SweepRequest):
        return jobs.submit("sweep", handlers.sweep_run, req)

    @app.get("/jobs", response_model=list[s.JobStatus])
    def list_jobs():
        return jobs.all()

    @app.get("/jobs/{job_id}", response_model=s.JobStatus)
    def get_job(job_id: str):
        try:
            return jobs.get(job_id)
        except KeyError:
            raise HTTPException(status_code=404, detail=f"unknown job {job_id}") from None

    return app


app = create_app()
