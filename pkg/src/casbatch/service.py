"""Submission pipeline shared by the HTTP handlers and the scheduler.

A submitted query passes through rewriting, context selection, and target
selection here, once, at submit time; whatever survives is stored on the
job row and trusted downstream. The same helpers open the execution
environment later: one connection whose main schema is empty, with the
catalog contexts attached read-only under their own names and scratch
databases attached under their physical names. Only the caller's own
scratch database is ever writable.
"""

from __future__ import annotations

import re
import sqlite3
import time
from dataclasses import dataclass

from . import engine, executor, rewriter
from .admindb import AdminDb
from .errors import InvalidSubmission, NotOwner, TableExists
from .model import (
    JobEvent,
    JobKind,
    JobRecord,
    QueueMode,
    UserRecord,
    now_ms,
)
from .mydb import MyDbManager
from .rewriter import RewriteResult

_MYDB_WORD = re.compile(r"\bmydb\b", re.IGNORECASE)


@dataclass(frozen=True, slots=True)
class PreparedQuery:
    user: UserRecord
    clean_sql: str
    dest: tuple[str, str] | None        # (physical scratch db, table)
    referenced_contexts: tuple[str, ...]
    context: str | None                 # primary context, or "mydb", or None
    target_id: int


def _rewrite_for(admin: AdminDb, user: UserRecord, query: str, *,
                 require_dest: bool) -> RewriteResult:
    memberships = admin.groups_for_user(user.ws_id)
    published = admin.published_for_groups([g.group_id for g in memberships])
    return rewriter.rewrite(
        query,
        user=user,
        rules=admin.list_rules(),
        memberships=memberships,
        published=published,
        known_contexts=tuple(admin.known_contexts()),
        require_dest=require_dest,
    )


def _pick_context(admin: AdminDb, result: RewriteResult,
                  explicit: str | None) -> str | None:
    """Primary context for execution: the caller's word wins, then the
    first context the query names, then the scratch database if that is
    all it touches, then the alphabetically first registered context."""
    if explicit:
        if explicit.lower() == "mydb":
            return "mydb"
        admin.target_for_context(explicit)  # UnknownContext for bad names
        return explicit
    if result.referenced_contexts:
        return result.referenced_contexts[0]
    if engine.collect_mydb_refs(result.clean_sql):
        return "mydb"
    known = admin.known_contexts()
    return known[0] if known else None


def prepare_query(admin: AdminDb, mydbm: MyDbManager, ws_id: int, query: str,
                  *, context: str | None = None,
                  require_dest: bool) -> PreparedQuery:
    # provisioning trigger: the first query that says MyDB creates it
    if _MYDB_WORD.search(query) or (context and context.lower() == "mydb"):
        mydbm.ensure_mydb(ws_id)
    user = admin.get_user(ws_id)
    result = _rewrite_for(admin, user, query, require_dest=require_dest)
    primary = _pick_context(admin, result, context)
    if primary is None or primary == "mydb":
        _, target = mydbm.ensure_mydb(ws_id)
        user = admin.get_user(ws_id)
        target_id = target.target_id
    else:
        target_id = admin.target_for_context(primary).target_id
    return PreparedQuery(
        user=user,
        clean_sql=result.clean_sql,
        dest=result.dest_table,
        referenced_contexts=result.referenced_contexts,
        context=primary,
        target_id=target_id,
    )


def submit_job(admin: AdminDb, mydbm: MyDbManager, ws_id: int, query: str,
               queue_id: str, *, context: str | None = None) -> JobRecord:
    """Validate eagerly and enqueue; a job that reaches Ready state has
    already survived screening, alias resolution, and a destination check."""
    queue = admin.get_queue(queue_id)
    if queue.mode is QueueMode.SYNC:
        raise InvalidSubmission(
            f"queue {queue_id!r} is synchronous; use the quick endpoint"
        )
    prepared = prepare_query(
        admin, mydbm, ws_id, query, context=context, require_dest=True
    )
    dest_mydb = dest_table = None
    if prepared.dest is not None:
        dest_mydb, dest_table = prepared.dest
        conn = engine.connect(mydbm.path_for(ws_id), read_only=True)
        try:
            if engine.table_exists(conn, dest_table):
                raise TableExists(
                    f"table {dest_table!r} already exists; drop it or pick "
                    "another name"
                )
        finally:
            conn.close()
    return admin.create_job(
        user_id=ws_id,
        queue_id=queue.queue_id,
        target_id=prepared.target_id,
        job_kind=JobKind.QUERY,
        query_text=query,
        rewritten_text=prepared.clean_sql,
        dest_mydb=dest_mydb,
        dest_table=dest_table,
        context=prepared.context,
    )


def resubmit_job(admin: AdminDb, mydbm: MyDbManager, ws_id: int,
                 job_id: int) -> JobRecord:
    """Clone query and queue into a fresh Ready job, revalidating from
    scratch: rules or published tables may have changed since."""
    old = admin.get_job(job_id)
    if old.user_id != ws_id:
        raise NotOwner(f"job {job_id} belongs to another user")
    if old.job_kind is not JobKind.QUERY:
        raise InvalidSubmission("only query jobs can be resubmitted")
    return submit_job(
        admin, mydbm, ws_id, old.query_text, old.queue_id, context=old.context
    )


def open_query_env(admin: AdminDb, mydbm: MyDbManager,
                   prepared_user: UserRecord, clean_sql: str,
                   referenced_contexts: tuple[str, ...],
                   context: str | None) -> sqlite3.Connection:
    """Connection for one query run.

    The primary context is attached first so unqualified table names
    resolve into it; remaining references follow. Catalog contexts are
    read-only, the caller's scratch database is read-write, anyone
    else's (reachable only through published aliases) is read-only.
    """
    conn = engine.connect(":memory:")
    attached: set[str] = set()

    def attach_context(name: str) -> None:
        if name.lower() in attached:
            return
        target = admin.target_for_context(name)
        engine.attach(conn, engine.context_path(target.locator, name), name,
                      read_only=True)
        attached.add(name.lower())

    def attach_mydb(name: str) -> None:
        if name.lower() in attached:
            return
        owner = admin.user_for_mydb(name)
        target = admin.get_target(owner.mydb_target)
        engine.attach(conn, engine.mydb_path(target.locator, name), name,
                      read_only=owner.ws_id != prepared_user.ws_id)
        attached.add(name.lower())

    try:
        if context == "mydb":
            attach_mydb(prepared_user.mydb_name)
        elif context is not None:
            attach_context(context)
        for name in referenced_contexts:
            attach_context(name)
        for name in sorted(engine.collect_mydb_refs(clean_sql)):
            attach_mydb(name)
    except Exception:
        conn.close()
        raise
    return conn


def open_env_for_job(admin: AdminDb, mydbm: MyDbManager,
                     job: JobRecord) -> sqlite3.Connection:
    """Rebuild the execution environment for a stored job from its row."""
    user = admin.get_user(job.user_id)
    refs = rewriter.contexts_in(job.rewritten_text, tuple(admin.known_contexts()))
    return open_query_env(admin, mydbm, user, job.rewritten_text, refs,
                          job.context)


def run_quick(admin: AdminDb, mydbm: MyDbManager, ws_id: int, query: str, *,
              context: str | None = None) -> tuple[JobRecord, executor.RowSet]:
    """The synchronous lane: execute within the sync queue's quantum and
    row cap, recording the run as a finished job for history and stats."""
    queue = admin.sync_queue()
    prepared = prepare_query(
        admin, mydbm, ws_id, query, context=context, require_dest=False
    )
    if prepared.dest is not None:
        raise InvalidSubmission(
            "INTO MyDB needs an asynchronous queue; submit it as a job"
        )
    job = admin.create_job(
        user_id=ws_id,
        queue_id=queue.queue_id,
        target_id=prepared.target_id,
        job_kind=JobKind.QUERY,
        query_text=query,
        rewritten_text=prepared.clean_sql,
        context=prepared.context,
        route="quick",
    )
    job = admin.transition_job(job.job_id, JobEvent.START)
    t0 = time.perf_counter()
    cpu0 = time.thread_time()
    conn = open_query_env(
        admin, mydbm, prepared.user, prepared.clean_sql,
        prepared.referenced_contexts, prepared.context,
    )
    try:
        rowset = executor.run_quick(
            conn, prepared.clean_sql,
            quantum_s=queue.quantum_s, max_rows=queue.max_rows,
        )
        conn.commit()  # persist scratch-db DML issued through this lane
    except Exception as exc:
        admin.transition_job(job.job_id, JobEvent.FAIL, error_msg=str(exc))
        raise
    finally:
        conn.close()
    job = admin.transition_job(
        job.job_id, JobEvent.COMPLETE, rows_out=len(rowset.rows)
    )
    admin.record_stat(
        job.job_id,
        elapsed_s=time.perf_counter() - t0,
        rows=len(rowset.rows),
        cpu_s=time.thread_time() - cpu0,
        t_finished=job.t_finished if job.t_finished is not None else now_ms(),
    )
    return job, rowset
