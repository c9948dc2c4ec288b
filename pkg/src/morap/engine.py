"""Parallel execution of independent per-model jobs.

Topology: one queue manager per backend (the CPU pool plus any registered
accelerator slots).  Each manager owns a bounded FIFO queue and a group of
workers.  A manager whose queue runs dry while its workers are idle asks a
peer for a job over a message channel; the peer answers with a job from the
tail of its queue or a refusal.

Jobs carry their model by value.  In process mode each worker thread drives
one dedicated child process that caches models by digest, so a model is
shipped to a given process at most once.
"""
from __future__ import annotations

import collections
import logging
import multiprocessing as mp
import os
import queue
import threading
import time
import traceback
from dataclasses import dataclass, field
from typing import Hashable, Iterable, Literal, Sequence

import numpy as np

from .errors import InvalidConfig
from .model import ProductMdp
from .numerics import DEFAULT_EPS, Scheduler, evaluate_scheduler, optimal_scheduler

log = logging.getLogger(__name__)

STEAL_BACKOFF = 0.001
DEFAULT_CAPACITY = 64


@dataclass(frozen=True, eq=False)
class Job:
    id: Hashable
    kind: Literal["optimize", "evaluate"]
    product: ProductMdp
    weights: tuple[float, float]
    scheduler: Scheduler | None = None
    eps: float = DEFAULT_EPS


@dataclass(frozen=True)
class JobResult:
    value: float | None
    scheduler: Scheduler | None = None
    error: str | None = None
    sweeps: int = 0

    @property
    def ok(self) -> bool:
        return self.error is None


def execute(job: Job) -> JobResult:
    """The compute kernel shared by every backend."""
    try:
        p = job.product
        rho = job.weights[0] * p.cost + job.weights[1] * p.success
        if job.kind == "optimize":
            res = optimal_scheduler(p, rho, eps=job.eps)
            return JobResult(res.value, res.scheduler, sweeps=res.sweeps)
        if job.kind == "evaluate":
            if job.scheduler is None:
                raise ValueError("evaluate job without a scheduler")
            return JobResult(evaluate_scheduler(p, job.scheduler, rho, eps=job.eps))
        raise ValueError(f"unknown job kind {job.kind!r}")
    except Exception as exc:  # isolated per job
        return JobResult(None, error=f"{type(exc).__name__}: {exc}\n{traceback.format_exc()}")


# --- backends --------------------------------------------------------------------

def _child_main(conn) -> None:
    cache: dict[str, ProductMdp] = {}
    while True:
        msg = conn.recv()
        if msg is None:
            break
        kind, digest, product, weights, scheduler, eps = msg
        if product is not None:
            cache[digest] = product
        job = Job(0, kind, cache[digest], weights, scheduler, eps)
        conn.send(execute(job))


class _InlineRunner:
    def run(self, job: Job) -> JobResult:
        return execute(job)

    def close(self) -> None:
        pass


class _ProcessRunner:
    """Drives a single child process; the owning worker thread is the only caller."""

    def __init__(self, ctx):
        self._conn, child = ctx.Pipe()
        self._proc = ctx.Process(target=_child_main, args=(child,), daemon=True)
        self._proc.start()
        child.close()
        self._shipped: set[str] = set()

    def run(self, job: Job) -> JobResult:
        d = job.product.digest
        ship = None if d in self._shipped else job.product
        try:
            self._conn.send((job.kind, d, ship, job.weights, job.scheduler, job.eps))
            res = self._conn.recv()
        except (EOFError, OSError, BrokenPipeError) as exc:
            return JobResult(None, error=f"worker process lost: {exc}")
        self._shipped.add(d)
        return res

    def close(self) -> None:
        try:
            self._conn.send(None)
        except (OSError, BrokenPipeError):
            pass
        self._proc.join(timeout=2)
        if self._proc.is_alive():
            self._proc.terminate()


class Backend:
    """A compute backend: something that runs optimize and evaluate jobs."""

    name = "backend"

    def runner(self):
        return _InlineRunner()

    def run_optimize(self, job: Job) -> JobResult:
        return execute(job)

    def run_evaluate(self, job: Job) -> JobResult:
        return execute(job)


class CpuPool(Backend):
    name = "cpu"

    def __init__(self, processes: bool):
        self.processes = processes
        self._ctx = mp.get_context("spawn") if processes else None

    def runner(self):
        return _ProcessRunner(self._ctx) if self.processes else _InlineRunner()


class StubAccelerator(Backend):
    """Accelerator slot without device code; runs the CPU kernel in its own thread."""

    name = "stub-accelerator"


# --- configuration ----------------------------------------------------------------

def available_cores() -> int:
    try:
        return len(os.sched_getaffinity(0))
    except AttributeError:
        return os.cpu_count() or 1


@dataclass(frozen=True)
class PoolConfig:
    workers: int
    queues: int = 1
    capacity: int = DEFAULT_CAPACITY
    processes: bool = True


def configure_pool(workers: int | None = None, queues: int = 1,
                   capacity: int = DEFAULT_CAPACITY, processes: bool | None = None) -> PoolConfig:
    """Validate a pool configuration.

    ``workers`` falls back to ``MORAP_WORKERS`` and then to the number of
    usable cores.  Queues beyond the first are stub accelerator slots.
    """
    if workers is None:
        env = os.environ.get("MORAP_WORKERS")
        if env is not None:
            try:
                workers = int(env)
            except ValueError as exc:
                raise InvalidConfig(f"MORAP_WORKERS={env!r} is not an integer") from exc
        else:
            workers = available_cores()
    if not isinstance(workers, (int, np.integer)) or workers < 1:
        raise InvalidConfig("at least one worker is required")
    if queues < 1:
        raise InvalidConfig("at least one queue is required")
    if capacity < 1:
        raise InvalidConfig("queue capacity must be positive")
    if processes is None:
        processes = workers > 1
    return PoolConfig(int(workers), int(queues), int(capacity), bool(processes))


# --- managers and workers ------------------------------------------------------------

class _Batch:
    def __init__(self, n: int):
        self.results: dict = {}
        self.remaining = n
        self.lock = threading.Lock()
        self.done = threading.Event()
        if n == 0:
            self.done.set()

    def deliver(self, job_id, res: JobResult) -> None:
        with self.lock:
            if job_id in self.results:
                raise RuntimeError(f"job {job_id!r} completed twice")
            self.results[job_id] = res
            self.remaining -= 1
            if self.remaining == 0:
                self.done.set()


class QueueManager(threading.Thread):
    def __init__(self, index: int, backend: Backend, nworkers: int, capacity: int):
        super().__init__(name=f"morap-manager-{index}", daemon=True)
        self.index = index
        self.backend = backend
        self.capacity = capacity
        self.jobs: collections.deque = collections.deque()
        self.cond = threading.Condition()
        self.inbox: queue.Queue = queue.Queue()
        self.peers: list[QueueManager] = []
        self.batch: _Batch | None = None
        self.idle_workers = 0
        self.steals_sent = 0
        self.steals_served = 0
        self._stopping = False
        self._steal_pending = False
        self._next_peer = 0
        self.workers = [_Worker(self, k) for k in range(nworkers)]

    # queue operations (callers hold no other manager's lock)
    def offer(self, job: Job) -> bool:
        with self.cond:
            if len(self.jobs) >= self.capacity:
                return False
            self.jobs.append(job)
            self.cond.notify()
            return True

    def take(self) -> Job | None:
        with self.cond:
            while not self.jobs and not self._stopping:
                self.idle_workers += 1
                self.cond.wait(timeout=0.05)
                self.idle_workers -= 1
            return None if self._stopping else self.jobs.popleft()

    def run(self) -> None:
        while not self._stopping:
            try:
                msg = self.inbox.get(timeout=STEAL_BACKOFF)
            except queue.Empty:
                msg = None
            if msg is not None:
                self._handle(msg)
            self._maybe_steal()

    def _handle(self, msg) -> None:
        kind = msg[0]
        if kind == "stop":
            with self.cond:
                self._stopping = True
                self.cond.notify_all()
        elif kind == "steal":
            requester = msg[1]
            job = None
            with self.cond:
                # only surplus work is handed out; otherwise two idle managers trade a job forever
                if len(self.jobs) > self.idle_workers:
                    job = self.jobs.pop()
            if job is not None:
                self.steals_served += 1
            requester.inbox.put(("grant", job))
        elif kind == "grant":
            self._steal_pending = False
            job = msg[1]
            if job is not None:
                with self.cond:
                    self.jobs.append(job)
                    self.cond.notify()

    def _maybe_steal(self) -> None:
        if self._steal_pending or not self.peers:
            return
        batch = self.batch
        if batch is None or batch.done.is_set():
            return
        with self.cond:
            hungry = not self.jobs and self.idle_workers > 0
        if not hungry:
            return
        peer = self.peers[self._next_peer % len(self.peers)]
        self._next_peer += 1
        self._steal_pending = True
        self.steals_sent += 1
        peer.inbox.put(("steal", self))

    def start_all(self) -> None:
        self.start()
        for w in self.workers:
            w.start()

    def stop(self) -> None:
        self.inbox.put(("stop",))


class _Worker(threading.Thread):
    def __init__(self, manager: QueueManager, k: int):
        super().__init__(name=f"morap-worker-{manager.index}-{k}", daemon=True)
        self.manager = manager
        self.executed = 0
        self._runner = None

    def run(self) -> None:
        self._runner = self.manager.backend.runner()
        try:
            while True:
                job = self.manager.take()
                if job is None:
                    return
                res = self._runner.run(job)
                self.executed += 1
                batch = self.manager.batch
                batch.deliver(job.id, res)
        finally:
            self._runner.close()


class Engine:
    """Persistent worker pool; use as a context manager or call :meth:`close`."""

    def __init__(self, config: PoolConfig | None = None, accelerators: Sequence[Backend] = ()):
        self.config = config or configure_pool()
        cfg = self.config
        backends: list[Backend] = [CpuPool(cfg.processes)]
        extra = list(accelerators)
        while len(backends) + len(extra) < cfg.queues:
            extra.append(StubAccelerator())
        backends += extra
        self.managers = [QueueManager(0, backends[0], cfg.workers, cfg.capacity)]
        self.managers += [QueueManager(k, b, 1, cfg.capacity) for k, b in enumerate(backends[1:], 1)]
        for m in self.managers:
            m.peers = [p for p in self.managers if p is not m]
        self._lock = threading.Lock()
        self._closed = False
        for m in self.managers:
            m.start_all()

    def topology(self) -> dict:
        return {"managers": [{"index": m.index, "backend": m.backend.name,
                              "workers": len(m.workers), "capacity": m.capacity,
                              "peers": [p.index for p in m.peers]} for m in self.managers]}

    def run_batch(self, jobs: Iterable[Job], placement=None) -> dict:
        """Run all jobs and return ``{job id: JobResult}``.

        ``placement(k)`` picks the preferred queue of the ``k``-th job
        (round-robin by default).
        """
        jobs = list(jobs)
        ids = [j.id for j in jobs]
        if len(set(ids)) != len(ids):
            raise ValueError("job ids must be unique within a batch")
        with self._lock:
            if self._closed:
                raise RuntimeError("engine is closed")
            batch = _Batch(len(jobs))
            for m in self.managers:
                m.batch = batch
            k = len(self.managers)
            for n, job in enumerate(jobs):
                home = (n if placement is None else placement(n)) % k
                while True:
                    # preferred queue first, then hand off to any queue with room
                    if any(self.managers[(home + d) % k].offer(job) for d in range(k)):
                        break
                    time.sleep(STEAL_BACKOFF)
            batch.done.wait()
            return dict(batch.results)

    def close(self) -> None:
        with self._lock:
            if self._closed:
                return
            self._closed = True
            for m in self.managers:
                m.stop()
            for m in self.managers:
                m.join(timeout=5)
                for w in m.workers:
                    w.join(timeout=5)

    def __enter__(self) -> "Engine":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


class InlineEngine:
    """Runs jobs one after another in the calling thread."""

    config = PoolConfig(workers=1, queues=1, processes=False)

    def run_batch(self, jobs: Iterable[Job], placement=None) -> dict:
        out = {}
        for job in jobs:
            if job.id in out:
                raise ValueError("job ids must be unique within a batch")
            out[job.id] = execute(job)
        return out

    def close(self) -> None:
        pass

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        pass


def make_engine(workers: int | None = None, **kw):
    """Inline engine for a single worker, thread/process pool otherwise."""
    cfg = configure_pool(workers, **kw)
    if cfg.workers == 1 and cfg.queues == 1:
        return InlineEngine()
    return Engine(cfg)
