"""HTTP service behind the web UI: job queue, live logs, preview, benchmarks.

Jobs run one at a time on a worker thread (synthesis saturates the CPU);
submissions queue FIFO.  Log lines are captured from the package loggers
into an append-only per-job buffer, so incremental fetches can never lose
or reorder lines.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import threading
import time
from typing import Optional

import numpy as np
from fastapi import FastAPI, HTTPException, Query, Request

from . import benchmarks
from .certify import result_json, synthesize
from .config import Configuration, config_from_dict, config_to_dict
from .data import Dataset
from .estimator import KernelParams, fit
from .geometry import MultiSet, RegionSet, unit_transform

__all__ = ["Job", "JobQueue", "create_app", "main"]

log = logging.getLogger(__name__)

_PKG_LOGGER = __name__.rsplit(".", 1)[0]
_LOG_FORMAT = "%(levelname)s %(name)s: %(message)s"
_ACTIVE = ("queued", "running")


class Job:
    """One submitted configuration with its state, log buffer, and result."""

    def __init__(self, job_id: str, config: Configuration):
        self.id = job_id
        self.config = config
        self.state = "queued"
        self.log_lines: list[str] = []
        self.result_text: Optional[str] = None
        self.error: Optional[str] = None
        self.cond = threading.Condition()

    def append_log(self, line: str) -> None:
        with self.cond:
            self.log_lines.append(line)
            self.cond.notify_all()

    def set_state(self, state: str) -> None:
        with self.cond:
            self.state = state
            self.cond.notify_all()

    def record(self) -> dict:
        with self.cond:
            return {
                "id": self.id,
                "state": self.state,
                "config": config_to_dict(self.config),
                "log": list(self.log_lines),
                "result": json.loads(self.result_text) if self.result_text else None,
                "error": self.error,
            }

    def logs_after(self, start: int, wait: float) -> tuple[list[str], str]:
        """Snapshot of log lines past `start`, blocking up to `wait` seconds."""
        deadline = time.monotonic() + wait
        with self.cond:
            while len(self.log_lines) <= start and self.state in _ACTIVE:
                remaining = deadline - time.monotonic()
                if remaining <= 0:
                    break
                self.cond.wait(remaining)
            return list(self.log_lines[start:]), self.state


class _JobLogHandler(logging.Handler):
    def __init__(self, job: Job):
        super().__init__(logging.INFO)
        self.job = job
        self.setFormatter(logging.Formatter(_LOG_FORMAT))

    def emit(self, record: logging.LogRecord) -> None:
        try:
            self.job.append_log(self.format(record))
        except Exception:
            self.handleError(record)


class JobQueue:
    """FIFO queue with a single worker thread."""

    def __init__(self):
        self.jobs: dict[str, Job] = {}
        self.pending: list[Job] = []
        self.lock = threading.Condition()
        self._counter = 0
        self._stop = False
        self.worker = threading.Thread(target=self._run, name="specbar-worker", daemon=True)
        self.worker.start()

    def submit(self, config: Configuration) -> Job:
        with self.lock:
            self._counter += 1
            job = Job(f"job-{self._counter}", config)
            self.jobs[job.id] = job
            self.pending.append(job)
            self.lock.notify_all()
        return job

    def get(self, job_id: str) -> Optional[Job]:
        with self.lock:
            return self.jobs.get(job_id)

    def shutdown(self) -> None:
        with self.lock:
            self._stop = True
            self.lock.notify_all()

    def _run(self) -> None:
        while True:
            with self.lock:
                while not self.pending and not self._stop:
                    self.lock.wait()
                if self._stop:
                    return
                job = self.pending.pop(0)
            self._execute(job)

    def _execute(self, job: Job) -> None:
        handler = _JobLogHandler(job)
        pkg_logger = logging.getLogger(_PKG_LOGGER)
        job.set_state("running")
        pkg_logger.addHandler(handler)
        try:
            result = synthesize(job.config)
            text = result_json(result)
            with job.cond:
                job.result_text = text
            log.info("job %s finished: %s", job.id, result.status)
            job.set_state("done")
        except Exception as exc:
            log.error("job %s failed: %s", job.id, exc)
            with job.cond:
                job.error = str(exc)
            job.set_state("failed")
        finally:
            pkg_logger.removeHandler(handler)


def _region_boxes(region: RegionSet) -> list:
    """Axis-aligned bounding boxes, one per member set."""
    if isinstance(region, MultiSet):
        out = []
        for member in region.members:
            out.extend(_region_boxes(member))
        return out
    lo, hi = region.bounding_box()
    return [[lo.tolist(), hi.tolist()]]


def _preview_payload(config: Configuration) -> dict:
    """Estimator mean predictions on a state-space grid plus set boxes.

    For three or more dimensions the grid varies the first two coordinates
    with the rest held at the domain midpoint.
    """
    data = config.resolve_dataset()
    transform = unit_transform(config.domain, config.pad)
    est = fit(
        KernelParams(config.sigma_f, list(config.sigma_l), config.lambda_),
        Dataset(transform.apply(data.x), transform.apply(data.xp)),
    )
    lo, hi = config.domain.bounding_box()
    n = config.n_dims
    if n == 1:
        axes = [np.linspace(lo[0], hi[0], 201)]
        pts = axes[0][:, None]
    else:
        axes = [np.linspace(lo[d], hi[d], 25) for d in (0, 1)]
        g0, g1 = np.meshgrid(axes[0], axes[1], indexing="ij")
        pts = np.column_stack([g0.ravel(), g1.ravel()])
        if n > 2:
            mid = (lo + hi) / 2.0
            pts = np.hstack([pts, np.tile(mid[2:], (pts.shape[0], 1))])
    pred = transform.invert(est.predict(transform.apply(pts)))
    return {
        "dims": int(n),
        "axes": [a.tolist() for a in axes],
        "points": pts.tolist(),
        "predictions": pred.tolist(),
        "sets": {
            "domain": _region_boxes(config.domain),
            "init": _region_boxes(config.init),
            "unsafe": _region_boxes(config.unsafe),
        },
    }


def _parse_body(raw) -> Configuration:
    try:
        return config_from_dict(raw)
    except ValueError as exc:
        raise HTTPException(status_code=400, detail=str(exc))


def create_app() -> FastAPI:
    logging.getLogger(_PKG_LOGGER).setLevel(logging.INFO)
    app = FastAPI(title="specbar service")
    queue = JobQueue()
    app.state.queue = queue

    async def _json_body(request: Request):
        try:
            return await request.json()
        except Exception:
            raise HTTPException(status_code=400, detail="request body is not valid JSON")

    def _job_or_404(job_id: str) -> Job:
        job = queue.get(job_id)
        if job is None:
            raise HTTPException(status_code=404, detail=f"unknown job {job_id!r}")
        return job

    @app.post("/api/jobs", status_code=201)
    async def submit_job(request: Request):
        config = _parse_body(await _json_body(request))
        job = queue.submit(config)
        log.info("job %s queued", job.id)
        return {"id": job.id, "state": job.state}

    @app.get("/api/jobs/{job_id}")
    async def job_record(job_id: str):
        return _job_or_404(job_id).record()

    @app.get("/api/jobs/{job_id}/logs")
    def job_logs(
        job_id: str,
        start: int = Query(0, alias="from", ge=0),
        wait: float = Query(0.0, ge=0.0, le=30.0),
    ):
        job = _job_or_404(job_id)
        lines, state = job.logs_after(start, wait)
        return {"from": start, "next": start + len(lines), "lines": lines, "state": state}

    @app.post("/api/preview")
    async def preview(request: Request):
        config = _parse_body(await _json_body(request))
        return _preview_payload(config)

    @app.get("/api/benchmarks")
    async def list_benchmarks():
        return {
            "benchmarks": [
                {"name": name, "config": config_to_dict(benchmarks.load(name))}
                for name in benchmarks.names()
            ]
        }

    return app


def main() -> None:
    parser = argparse.ArgumentParser(prog="specbar-serve", description="Run the HTTP service.")
    parser.add_argument("--host", default="127.0.0.1")
    parser.add_argument(
        "--port",
        type=int,
        default=None,
        help="listen port (default: SPECBAR_PORT environment variable, then 8000)",
    )
    args = parser.parse_args()
    port = args.port if args.port is not None else int(os.environ.get("SPECBAR_PORT", "8000"))

    import uvicorn

    logging.basicConfig(level=logging.INFO, format=_LOG_FORMAT)
    uvicorn.run(create_app(), host=args.host, port=port, log_level="info")


if __name__ == "__main__":
    main()
