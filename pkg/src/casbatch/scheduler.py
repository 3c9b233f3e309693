"""The polling dispatcher.

A single control loop wakes on a fixed cadence and works through the jobs
table: reap finished workers, fail orphans left by a previous process,
honor cancel flags, kill over-quantum runs, hand Ready jobs to workers up
to each target's concurrency cap, feed one export slot, and purge expired
output files. Every decision round-trips through the admin database, so a
restart loses nothing but in-flight row streams.

Within the process there is one worker thread per dispatched job, one
driver thread per active shared-scan wheel, and at most one export
thread. All cross-thread agreement goes through compare-and-set state
transitions; the loser of any race logs and moves on.
"""

from __future__ import annotations

import logging
import os
import signal
import threading
import time
from dataclasses import dataclass, field
from typing import Callable

from . import engine, service, sharedscan
from .admindb import AdminDb
from .errors import (
    EngineError,
    IllegalTransition,
    StaleState,
    Stopped,
    TableExists,
)
from .executor import StopToken, run_async
from .model import (
    JobEvent,
    JobKind,
    JobRecord,
    UserRecord,
    now_ms,
)
from .mydb import MyDbManager

log = logging.getLogger("casbatch.scheduler")


def log_notifier(user: UserRecord, job: JobRecord) -> None:
    """Default notification: a log line stands in for outbound mail."""
    log.info("notify user %s: job %s is %s", user.ws_id, job.job_id,
             job.state.value)


@dataclass
class SchedulerConfig:
    poll_interval_s: float = 5.0
    retention_s: float = 604800.0          # one week of output files
    chunk_size: int = 1000
    use_wheel: bool = True
    wheel_buckets: int = sharedscan.DEFAULT_BUCKETS
    notifier: Callable[[UserRecord, JobRecord], None] = log_notifier
    export_concurrency: int = 1            # fixed; a knob would be a lie

    def validate(self) -> None:
        if self.poll_interval_s < 1:
            raise ValueError("poll_interval_s must be >= 1")
        if self.retention_s <= 0:
            raise ValueError("retention_s must be positive")
        if self.export_concurrency != 1:
            raise ValueError("exports run strictly sequentially")


@dataclass
class DispatchReport:
    """What one poll did; lists hold job ids (purged holds tokens)."""

    started: list[int] = field(default_factory=list)
    timed_out: list[int] = field(default_factory=list)
    canceled: list[int] = field(default_factory=list)
    exported: list[int] = field(default_factory=list)
    purged: list[str] = field(default_factory=list)
    orphaned: list[int] = field(default_factory=list)


@dataclass
class _WorkerHandle:
    job_id: int
    target_id: int
    stop: StopToken
    thread: threading.Thread | None = None
    conn: object = None             # source connection, for interrupt()

    def interrupt(self) -> None:
        conn = self.conn
        if conn is None:
            return
        try:
            conn.interrupt()
        except Exception:
            pass    # the worker already closed it; it is done either way


class TableSink:
    """Wheel sink that lands matches in the rider's destination table,
    chunk-transactionally, mirroring the private path's visibility."""

    def __init__(self, admin: AdminDb, job_id: int, dest_path: str,
                 dest_table: str):
        self._admin = admin
        self._job_id = job_id
        self._path = dest_path
        self._table = dest_table
        self._conn = None
        self._n_columns = 0
        self.rows_written = 0

    def ensure(self, columns: list[tuple[str, str]]) -> None:
        self._conn = engine.connect(self._path)
        if engine.table_exists(self._conn, self._table):
            self._conn.close()
            self._conn = None
            raise TableExists(f"table {self._table!r} already exists")
        engine.create_table(self._conn, self._table, columns)
        self._conn.commit()
        self._n_columns = len(columns)

    def write(self, rows: list[tuple]) -> None:
        with self._conn:
            engine.insert_rows(self._conn, self._table, self._n_columns, rows)
        self.rows_written += len(rows)
        self._admin.set_rows_out(self._job_id, self.rows_written)

    def finish(self) -> None:
        if self._conn is not None:
            self._conn.close()
            self._conn = None

    def fail(self, exc: Exception) -> None:
        # partial rows stay visible, same contract as the private path
        self.finish()


class _WheelHost:
    """One shared-scan wheel plus its driver thread and rider→job map."""

    def __init__(self, scheduler: "JobScheduler", target_id: int,
                 context: str, path: str, table: str, buckets: int):
        self.wheel = sharedscan.ScanWheel(path, table, n_buckets=buckets)
        self.target_id = target_id
        self.context = context
        self.table = table
        self._scheduler = scheduler
        self._lock = threading.Lock()
        self._jobs: dict[int, tuple[int, TableSink, float]] = {}
        self._thread: threading.Thread | None = None

    @property
    def active(self) -> bool:
        with self._lock:
            alive = self._thread is None or self._thread.is_alive()
            return alive and self.wheel.rider_count > 0

    def board(self, job: JobRecord, scan: sharedscan.ScanQuery,
              sink: TableSink) -> bool:
        with self._lock:
            if self._thread is not None and not self._thread.is_alive():
                return False    # wheel wound down; caller builds a new one
            rider_id = self.wheel.admit(scan, sink)
            self._jobs[rider_id] = (job.job_id, sink, time.perf_counter())
            if self._thread is None:
                self._thread = threading.Thread(
                    target=self._drive, daemon=True,
                    name=f"wheel-{self.context}.{self.table}",
                )
                self._thread.start()
            return True

    def remove_job(self, job_id: int) -> bool:
        """Eject the rider carrying job_id; the caller transitions the job."""
        with self._lock:
            for rider_id, (jid, _sink, _t0) in list(self._jobs.items()):
                if jid == job_id:
                    self.wheel.eject(rider_id)
                    del self._jobs[rider_id]
                    return True
        return False

    def job_ids(self) -> list[int]:
        with self._lock:
            return [jid for jid, _s, _t in self._jobs.values()]

    def join(self, timeout: float | None = None) -> None:
        t = self._thread
        if t is not None:
            t.join(timeout)

    def _pop(self, rider_id: int) -> tuple[int, TableSink, float] | None:
        with self._lock:
            return self._jobs.pop(rider_id, None)

    def _drive(self) -> None:
        sched = self._scheduler
        try:
            while self.wheel.rider_count > 0:
                report = self.wheel.step()
                for rider_id in report.finished_riders:
                    entry = self._pop(rider_id)
                    if entry is None:
                        continue
                    job_id, sink, t0 = entry
                    sched._finish(
                        job_id, JobEvent.COMPLETE,
                        rows_out=sink.rows_written,
                        elapsed_s=time.perf_counter() - t0,
                        stat_rows=sink.rows_written,
                    )
                for rider_id, message in report.failed_riders:
                    entry = self._pop(rider_id)
                    if entry is None:
                        continue
                    job_id, _sink, _t0 = entry
                    sched._finish(job_id, JobEvent.FAIL, error_msg=message)
        except ValueError:
            pass    # every rider ejected between the check and the step
        except Exception as exc:
            log.exception("wheel over %s.%s stopped", self.context, self.table)
            with self._lock:
                doomed = [jid for jid, _s, _t in self._jobs.values()]
                self._jobs.clear()
            for job_id in doomed:
                sched._finish(job_id, JobEvent.FAIL,
                              error_msg=f"shared scan failed: {exc}")


class JobScheduler:
    """Single-process dispatcher over one admin database.

    Exactly one scheduler may run against a deployment; the capacity
    arithmetic assumes this process owns every worker slot.
    """

    def __init__(self, admin: AdminDb, mydbm: MyDbManager,
                 config: SchedulerConfig | None = None):
        self.admin = admin
        self.mydbm = mydbm
        self.config = config or SchedulerConfig()
        self.config.validate()
        self._lock = threading.Lock()
        self._workers: dict[int, _WorkerHandle] = {}
        self._wheels: dict[tuple[int, str, str], _WheelHost] = {}
        self._export_thread: threading.Thread | None = None
        self._stop_event = threading.Event()
        self._swept_orphans = False
        try:
            self._sync_queue_id = admin.sync_queue().queue_id
        except Exception:
            self._sync_queue_id = None   # no quick lane configured

    # -- the poll ----------------------------------------------------------

    def poll_once(self, now: int | None = None) -> DispatchReport:
        """One full scan of the jobs table; never raises for per-job trouble."""
        now = now if now is not None else now_ms()
        report = DispatchReport()
        self._reap_workers()
        if not self._swept_orphans:
            self._sweep_orphans(report)
            self._swept_orphans = True
        self._sweep_cancels(report)
        self._sweep_quanta(now, report)
        for target in self.admin.list_targets():
            self._dispatch_target(target, report)
        self._run_one_export(report)
        self._purge_downloads(now, report)
        return report

    def _reap_workers(self) -> None:
        with self._lock:
            done = [j for j, h in self._workers.items()
                    if h.thread is not None and not h.thread.is_alive()]
            for job_id in done:
                del self._workers[job_id]
            dead_wheels = [k for k, host in self._wheels.items()
                           if not host.active]
            for key in dead_wheels:
                del self._wheels[key]

    def _sweep_orphans(self, report: DispatchReport) -> None:
        """First poll only: Started rows nobody in this process owns were
        left by a dead scheduler. Results may be half-written; the user
        decides about a rerun via resubmit."""
        for job in self.admin.started_jobs():
            if job.route == "quick" or job.queue_id == self._sync_queue_id:
                continue    # quick jobs live in the API process, not here
            if self._owned(job.job_id):
                continue
            finished = self._finish(job.job_id, JobEvent.FAIL,
                                    error_msg="orphaned")
            if finished is not None:
                report.orphaned.append(job.job_id)

    def _owned(self, job_id: int) -> bool:
        with self._lock:
            if job_id in self._workers:
                return True
            return any(job_id in host.job_ids()
                       for host in self._wheels.values())

    def _sweep_cancels(self, report: DispatchReport) -> None:
        for job in self.admin.cancel_requested_jobs():
            handle = self._handle_for(job.job_id)
            if handle is not None:
                handle.stop.trip("cancel")
                handle.interrupt()
                report.canceled.append(job.job_id)   # worker lands the state
                continue
            host = self._wheel_for_job(job.job_id)
            if host is not None:
                host.remove_job(job.job_id)
            finished = self._finish(job.job_id, JobEvent.CANCEL)
            if finished is not None:
                report.canceled.append(job.job_id)

    def _sweep_quanta(self, now: int, report: DispatchReport) -> None:
        quanta = {q.queue_id: q.quantum_s for q in self.admin.list_queues()}
        for job in self.admin.started_jobs():
            quantum_s = quanta.get(job.queue_id)
            if quantum_s is None or job.t_started is None or job.cancel_requested:
                continue
            if now - job.t_started <= quantum_s * 1000.0:
                continue
            handle = self._handle_for(job.job_id)
            if handle is not None:
                handle.stop.trip("quantum")
                handle.interrupt()
                report.timed_out.append(job.job_id)  # worker lands the state
                continue
            host = self._wheel_for_job(job.job_id)
            if host is not None:
                host.remove_job(job.job_id)
            finished = self._finish(job.job_id, JobEvent.FAIL,
                                    error_msg="quantum exceeded")
            if finished is not None:
                report.timed_out.append(job.job_id)

    def _handle_for(self, job_id: int) -> _WorkerHandle | None:
        with self._lock:
            return self._workers.get(job_id)

    def _wheel_for_job(self, job_id: int) -> _WheelHost | None:
        with self._lock:
            for host in self._wheels.values():
                if job_id in host.job_ids():
                    return host
        return None

    # -- dispatch ------------------------------------------------------------

    def _slots_used(self, target_id: int) -> int:
        with self._lock:
            used = sum(1 for h in self._workers.values()
                       if h.target_id == target_id)
            used += sum(1 for host in self._wheels.values()
                        if host.target_id == target_id and host.active)
        return used

    def _dispatch_target(self, target, report: DispatchReport) -> None:
        used = self._slots_used(target.target_id)
        for job in self.admin.ready_jobs(target_id=target.target_id,
                                         kind=JobKind.QUERY):
            if job.cancel_requested:
                continue
            scan = self._wheel_scan(job)
            if scan is not None and self._dispatch_wheel(
                    target, job, scan, report,
                    slots_free=used < target.max_concurrent):
                used = self._slots_used(target.target_id)
                continue
            if used < target.max_concurrent and self._start_private(job):
                used += 1
                report.started.append(job.job_id)

    def _wheel_scan(self, job: JobRecord) -> sharedscan.ScanQuery | None:
        """A job rides the wheel when it is a plain scan over a catalog
        table and its output goes to a destination table. Scratch-database
        scans stay private: the snapshot rule needs a read-only table."""
        if not self.config.use_wheel or job.dest_table is None:
            return None
        if job.context is None or job.context == "mydb":
            return None
        scan = sharedscan.eligible_scan(job.rewritten_text)
        if scan is None:
            return None
        if scan.context is not None and scan.context.lower() != job.context.lower():
            return None
        return scan

    def _dispatch_wheel(self, target, job: JobRecord,
                        scan: sharedscan.ScanQuery, report: DispatchReport,
                        *, slots_free: bool) -> bool:
        """Returns True when the job was consumed by the wheel path
        (boarded, or failed terminally); False falls back to private."""
        key = (target.target_id, job.context.lower(), scan.table.lower())
        with self._lock:
            host = self._wheels.get(key)
        if host is None or not host.active:
            if not slots_free:
                return True    # no slot to spin a wheel; job stays Ready
            try:
                host = _WheelHost(
                    self, target.target_id, job.context,
                    engine.context_path(target.locator, job.context),
                    scan.table, self.config.wheel_buckets,
                )
            except Exception:
                return False   # table missing or unreadable: private path
            with self._lock:
                self._wheels[key] = host
        try:
            started = self.admin.transition_job(job.job_id, JobEvent.START)
        except (StaleState, IllegalTransition):
            return True
        sink = TableSink(self.admin, job.job_id,
                         self.mydbm.path_for(job.user_id), job.dest_table)
        try:
            if not host.board(started, scan, sink):
                # the drive thread can run out of riders between the host
                # lookup and the admit; a spent wheel is replaced, not an error
                host = _WheelHost(
                    self, target.target_id, job.context,
                    engine.context_path(target.locator, job.context),
                    scan.table, self.config.wheel_buckets,
                )
                with self._lock:
                    self._wheels[key] = host
                if not host.board(started, scan, sink):
                    raise RuntimeError("wheel wound down while boarding")
        except Exception as exc:
            self._finish(job.job_id, JobEvent.FAIL,
                         error_msg=f"could not board shared scan: {exc}")
            return True
        self.admin.set_route(job.job_id, "wheel")
        report.started.append(job.job_id)
        return True

    def _start_private(self, job: JobRecord) -> bool:
        try:
            self.admin.transition_job(job.job_id, JobEvent.START)
        except (StaleState, IllegalTransition):
            return False
        self.admin.set_route(job.job_id, "private")
        handle = _WorkerHandle(job.job_id, job.target_id, StopToken())
        with self._lock:
            self._workers[job.job_id] = handle
        thread = threading.Thread(
            target=self._run_private, args=(job, handle),
            daemon=True, name=f"job-{job.job_id}",
        )
        handle.thread = thread
        thread.start()
        return True

    def _run_private(self, job: JobRecord, handle: _WorkerHandle) -> None:
        t0 = time.perf_counter()
        cpu0 = time.thread_time()
        conn = None
        try:
            conn = service.open_env_for_job(self.admin, self.mydbm, job)
            handle.conn = conn
            if handle.stop.tripped:      # canceled before we even opened
                raise Stopped(handle.stop.reason or "stopped")
            if job.dest_table is not None:
                rows = run_async(
                    conn, job.rewritten_text,
                    self.mydbm.path_for(job.user_id), job.dest_table,
                    chunk_size=self.config.chunk_size,
                    progress=lambda n: self.admin.set_rows_out(job.job_id, n),
                    stop=handle.stop,
                )
            else:
                rows = self._run_dml(conn, job, handle.stop)
            self._finish(
                job.job_id, JobEvent.COMPLETE, rows_out=rows,
                elapsed_s=time.perf_counter() - t0,
                cpu_s=time.thread_time() - cpu0, stat_rows=rows,
            )
        except Stopped:
            if handle.stop.reason == "quantum":
                self._finish(job.job_id, JobEvent.FAIL,
                             error_msg="quantum exceeded")
            else:
                self._finish(job.job_id, JobEvent.CANCEL)
        except (EngineError, TableExists) as exc:
            self._finish(job.job_id, JobEvent.FAIL, error_msg=str(exc))
        except Exception as exc:
            log.exception("job %s worker crashed", job.job_id)
            self._finish(job.job_id, JobEvent.FAIL,
                         error_msg=f"internal error: {exc}")
        finally:
            if conn is not None:
                conn.close()

    def _run_dml(self, conn, job: JobRecord, stop: StopToken) -> int:
        """Statements without a destination table (scratch-database DML)."""
        try:
            cursor = engine.execute(conn, engine.to_engine_sql(job.rewritten_text))
            conn.commit()
        except EngineError as exc:
            if stop.tripped and "interrupt" in str(exc).lower():
                raise Stopped(stop.reason or "stopped") from exc
            raise
        return max(cursor.rowcount, 0)

    # -- exports -------------------------------------------------------------

    def _run_one_export(self, report: DispatchReport) -> None:
        with self._lock:
            busy = self._export_thread is not None and self._export_thread.is_alive()
        if busy:
            return
        pending = self.admin.ready_jobs(kind=JobKind.EXPORT, limit=1)
        if not pending:
            return
        job = pending[0]
        try:
            self.admin.transition_job(job.job_id, JobEvent.START)
        except (StaleState, IllegalTransition):
            return
        thread = threading.Thread(
            target=self._run_export, args=(job,),
            daemon=True, name=f"export-{job.job_id}",
        )
        with self._lock:
            self._export_thread = thread
        thread.start()
        report.exported.append(job.job_id)

    def _run_export(self, job: JobRecord) -> None:
        t0 = time.perf_counter()
        cpu0 = time.thread_time()
        try:
            path, count = self.mydbm.materialize_export(job)
            token = self.admin.create_download(job.job_id, path)
            self._finish(
                job.job_id, JobEvent.COMPLETE, rows_out=count,
                output_url=token, elapsed_s=time.perf_counter() - t0,
                cpu_s=time.thread_time() - cpu0, stat_rows=count,
            )
        except Exception as exc:
            log.exception("export job %s failed", job.job_id)
            self._finish(job.job_id, JobEvent.FAIL, error_msg=str(exc))

    # -- retention -----------------------------------------------------------

    def _purge_downloads(self, now: int, report: DispatchReport) -> None:
        cutoff = now - int(self.config.retention_s * 1000)
        for record in self.admin.expired_downloads(cutoff):
            try:
                os.remove(record.path)
            except FileNotFoundError:
                pass
            except OSError as exc:
                log.warning("could not remove %s: %s", record.path, exc)
                continue
            self.admin.mark_purged(record.token)
            self.admin.clear_output_url(record.job_id)
            report.purged.append(record.token)

    # -- terminal bookkeeping --------------------------------------------------

    def _finish(self, job_id: int, event: JobEvent, *,
                error_msg: str | None = None, rows_out: int | None = None,
                output_url: str | None = None, elapsed_s: float | None = None,
                cpu_s: float = 0.0,
                stat_rows: int | None = None) -> JobRecord | None:
        try:
            job = self.admin.transition_job(
                job_id, event,
                error_msg=error_msg, rows_out=rows_out, output_url=output_url,
            )
        except (StaleState, IllegalTransition) as exc:
            log.debug("job %s: lost terminal race (%s)", job_id, exc)
            return None
        if elapsed_s is not None and stat_rows is not None:
            self.admin.record_stat(
                job_id, elapsed_s=elapsed_s, rows=stat_rows, cpu_s=cpu_s,
                t_finished=job.t_finished if job.t_finished is not None else now_ms(),
            )
        self._notify(job)
        return job

    def _notify(self, job: JobRecord) -> None:
        if self.config.notifier is None:
            return
        try:
            user = self.admin.get_user(job.user_id)
            if user.notify:
                self.config.notifier(user, job)
        except Exception:
            log.exception("notifier failed for job %s", job.job_id)

    # -- service loop ----------------------------------------------------------

    def stop(self) -> None:
        self._stop_event.set()

    def run(self, *, install_signal_handlers: bool = True) -> None:
        """Poll forever; single poll failures are logged, not fatal."""
        if install_signal_handlers:
            signal.signal(signal.SIGTERM, self._on_signal)
            signal.signal(signal.SIGINT, self._on_signal)
        log.info("scheduler polling every %.1fs", self.config.poll_interval_s)
        while not self._stop_event.is_set():
            try:
                self.poll_once()
            except Exception:
                log.exception("poll failed; continuing")
            self._stop_event.wait(self.config.poll_interval_s)
        self.shutdown()

    def _on_signal(self, signum, frame) -> None:
        log.info("signal %s: draining", signum)
        self._stop_event.set()

    def shutdown(self, timeout_s: float = 30.0) -> None:
        """Drain running work to Canceled and wait for the threads."""
        with self._lock:
            handles = list(self._workers.values())
            hosts = list(self._wheels.values())
            export = self._export_thread
        for handle in handles:
            handle.stop.trip("cancel")
            handle.interrupt()
        for host in hosts:
            for job_id in host.job_ids():
                host.remove_job(job_id)
                self._finish(job_id, JobEvent.CANCEL)
        deadline = time.monotonic() + timeout_s
        for handle in handles:
            if handle.thread is not None:
                handle.thread.join(max(0.0, deadline - time.monotonic()))
        for host in hosts:
            host.join(max(0.0, deadline - time.monotonic()))
        if export is not None and export.is_alive():
            export.join(max(0.0, deadline - time.monotonic()))
        log.info("scheduler drained")
