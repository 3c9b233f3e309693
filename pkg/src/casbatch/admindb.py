"""Administrative database: users, queues, targets, groups, rules, jobs.

One SQLite file holds all coordination state. Every public method opens a
short-lived connection, so any number of threads and processes can share
one admin database; job-lifecycle atomicity rests on the compare-and-set
UPDATE in :meth:`AdminDb.transition_job`, not on in-memory locks.
"""

from __future__ import annotations

import hashlib
import json
import os
import secrets
import sqlite3
from contextlib import contextmanager
from dataclasses import dataclass

from . import model
from .errors import (
    AlreadyTerminal,
    DuplicateAlias,
    DuplicateContext,
    NotMember,
    StaleState,
    UnknownContext,
    UnknownGroup,
    UnknownJob,
    UnknownQueue,
    UnknownTarget,
    UnknownUser,
    UnreachableLocator,
)
from .model import (
    GroupRecord,
    JobEvent,
    JobKind,
    JobRecord,
    JobState,
    PublishedTable,
    QueueSpec,
    QueueMode,
    ScreenRule,
    ServerTarget,
    UserRecord,
    now_ms,
)

SCHEMA_VERSION = 1

# Salted slow hash for user passwords; identification, not hardening.
PBKDF2_ITERATIONS = 20_000

# Queue policy constants: a one-minute synchronous queue capped at 100k rows
# and a five-hundred-minute asynchronous queue.
DEFAULT_QUEUES = (
    QueueSpec("quick", 60.0, QueueMode.SYNC, max_rows=100_000),
    QueueSpec("long", 500 * 60.0, QueueMode.ASYNC),
)

# Shipped screening rule set; stored as data and editable at runtime.
DEFAULT_RULES = (
    (r"\bexec(?:ute)?\b.*\bsp_", "system stored procedures are not allowed"),
    (r"\bdrop\s+table\s+(?!mydb\.)", "DROP TABLE is only allowed inside MyDB"),
    (r"\bshutdown\b", "shutdown statements are not allowed"),
    (r";\s*--", "suspicious trailing comment after statement terminator"),
)

_SCHEMA = """
CREATE TABLE IF NOT EXISTS meta (
  key TEXT PRIMARY KEY,
  value TEXT NOT NULL
);
CREATE TABLE IF NOT EXISTS users (
  ws_id INTEGER PRIMARY KEY AUTOINCREMENT,
  password_hash TEXT NOT NULL,
  email TEXT,
  notify INTEGER NOT NULL DEFAULT 0,
  mydb_name TEXT,
  mydb_target INTEGER REFERENCES servers(target_id)
);
CREATE TABLE IF NOT EXISTS servers (
  target_id INTEGER PRIMARY KEY AUTOINCREMENT,
  name TEXT NOT NULL,
  locator TEXT NOT NULL,
  max_concurrent INTEGER NOT NULL DEFAULT 2,
  mydb_host INTEGER NOT NULL DEFAULT 1
);
CREATE TABLE IF NOT EXISTS server_contexts (
  target_id INTEGER NOT NULL REFERENCES servers(target_id),
  context TEXT NOT NULL COLLATE NOCASE UNIQUE
);
CREATE TABLE IF NOT EXISTS queues (
  queue_id TEXT PRIMARY KEY,
  quantum_s REAL NOT NULL,
  mode TEXT NOT NULL,
  max_rows INTEGER
);
CREATE TABLE IF NOT EXISTS jobs (
  job_id INTEGER PRIMARY KEY AUTOINCREMENT,
  user_id INTEGER NOT NULL REFERENCES users(ws_id),
  queue_id TEXT NOT NULL REFERENCES queues(queue_id),
  target_id INTEGER REFERENCES servers(target_id),
  job_kind TEXT NOT NULL,
  query_text TEXT NOT NULL DEFAULT '',
  rewritten_text TEXT NOT NULL DEFAULT '',
  dest_mydb TEXT,
  dest_table TEXT,
  state TEXT NOT NULL,
  t_submitted INTEGER NOT NULL,
  t_started INTEGER,
  t_finished INTEGER,
  rows_out INTEGER NOT NULL DEFAULT 0,
  error_msg TEXT,
  output_url TEXT,
  cancel_requested INTEGER NOT NULL DEFAULT 0,
  params TEXT NOT NULL DEFAULT '{}',
  route TEXT,
  context TEXT
);
CREATE INDEX IF NOT EXISTS idx_jobs_state ON jobs(state, target_id, t_submitted);
CREATE INDEX IF NOT EXISTS idx_jobs_user ON jobs(user_id, t_submitted DESC, job_id DESC);
CREATE TABLE IF NOT EXISTS groups (
  group_id INTEGER PRIMARY KEY AUTOINCREMENT,
  name TEXT NOT NULL UNIQUE COLLATE NOCASE,
  owner_ws INTEGER NOT NULL REFERENCES users(ws_id)
);
CREATE TABLE IF NOT EXISTS group_members (
  group_id INTEGER NOT NULL REFERENCES groups(group_id),
  ws_id INTEGER NOT NULL REFERENCES users(ws_id),
  UNIQUE(group_id, ws_id)
);
CREATE TABLE IF NOT EXISTS published_tables (
  group_id INTEGER NOT NULL REFERENCES groups(group_id),
  publisher_ws INTEGER NOT NULL,
  alias TEXT NOT NULL COLLATE NOCASE,
  mydb_name TEXT NOT NULL,
  table_name TEXT NOT NULL,
  published_at INTEGER NOT NULL,
  UNIQUE(group_id, alias)
);
CREATE TABLE IF NOT EXISTS screen_rules (
  rule_id INTEGER PRIMARY KEY AUTOINCREMENT,
  pattern TEXT NOT NULL,
  message TEXT NOT NULL
);
CREATE TABLE IF NOT EXISTS stats (
  job_id INTEGER NOT NULL,
  elapsed_s REAL NOT NULL,
  rows INTEGER NOT NULL,
  cpu_s REAL NOT NULL,
  t_finished INTEGER NOT NULL
);
CREATE TABLE IF NOT EXISTS downloads (
  token TEXT PRIMARY KEY,
  job_id INTEGER NOT NULL,
  path TEXT NOT NULL,
  created_at INTEGER NOT NULL,
  purged_at INTEGER
);
"""

_JOB_COLUMNS = (
    "job_id, user_id, queue_id, target_id, job_kind, query_text, rewritten_text, "
    "dest_mydb, dest_table, state, t_submitted, t_started, t_finished, rows_out, "
    "error_msg, output_url, cancel_requested, params, route, context"
)


def hash_password(password: str, *, iterations: int = PBKDF2_ITERATIONS) -> str:
    salt = secrets.token_hex(8)
    digest = hashlib.pbkdf2_hmac("sha256", password.encode(), salt.encode(), iterations)
    return f"pbkdf2:{iterations}:{salt}:{digest.hex()}"


def check_password(password: str, stored: str) -> bool:
    try:
        _, iters, salt, hexdigest = stored.split(":")
        digest = hashlib.pbkdf2_hmac("sha256", password.encode(), salt.encode(), int(iters))
        return secrets.compare_digest(digest.hex(), hexdigest)
    except (ValueError, AttributeError):
        return False


@dataclass(frozen=True, slots=True)
class DownloadRecord:
    token: str
    job_id: int
    path: str
    created_at: int
    purged_at: int | None

    @property
    def purged(self) -> bool:
        return self.purged_at is not None


def _job_from_row(row: tuple) -> JobRecord:
    return JobRecord(
        job_id=row[0],
        user_id=row[1],
        queue_id=row[2],
        target_id=row[3],
        job_kind=JobKind(row[4]),
        query_text=row[5],
        rewritten_text=row[6],
        dest_mydb=row[7],
        dest_table=row[8],
        state=JobState(row[9]),
        t_submitted=row[10],
        t_started=row[11],
        t_finished=row[12],
        rows_out=row[13],
        error_msg=row[14],
        output_url=row[15],
        cancel_requested=bool(row[16]),
        params=json.loads(row[17] or "{}"),
        route=row[18],
        context=row[19],
    )


class AdminDb:
    """Registry and job store over one administrative SQLite file."""

    def __init__(self, path: str, *, seed_defaults: bool = True):
        self.path = path
        with self._conn() as conn:
            conn.executescript(_SCHEMA)
            conn.execute(
                "INSERT OR IGNORE INTO meta(key, value) VALUES ('schema_version', ?)",
                (str(SCHEMA_VERSION),),
            )
            if seed_defaults:
                have = conn.execute("SELECT count(*) FROM queues").fetchone()[0]
                if not have:
                    for q in DEFAULT_QUEUES:
                        conn.execute(
                            "INSERT INTO queues(queue_id, quantum_s, mode, max_rows) VALUES (?,?,?,?)",
                            (q.queue_id, q.quantum_s, q.mode.value, q.max_rows),
                        )
                have = conn.execute("SELECT count(*) FROM screen_rules").fetchone()[0]
                if not have:
                    for pattern, message in DEFAULT_RULES:
                        conn.execute(
                            "INSERT INTO screen_rules(pattern, message) VALUES (?,?)",
                            (pattern, message),
                        )

    @contextmanager
    def _conn(self):
        conn = sqlite3.connect(self.path, timeout=30)
        try:
            conn.execute("PRAGMA journal_mode=WAL")
            conn.execute("PRAGMA busy_timeout=30000")
            yield conn
            conn.commit()
        except BaseException:
            conn.rollback()
            raise
        finally:
            conn.close()

    # -- users -----------------------------------------------------------

    def create_user(self, password: str, *, email: str | None = None,
                    notify: bool = False) -> UserRecord:
        password_hash = hash_password(password)
        with self._conn() as conn:
            cur = conn.execute(
                "INSERT INTO users(password_hash, email, notify) VALUES (?,?,?)",
                (password_hash, email, int(notify)),
            )
            ws_id = cur.lastrowid
        return UserRecord(ws_id=ws_id, password_hash=password_hash, email=email, notify=notify)

    def get_user(self, ws_id: int) -> UserRecord:
        with self._conn() as conn:
            row = conn.execute(
                "SELECT ws_id, password_hash, email, notify, mydb_name, mydb_target "
                "FROM users WHERE ws_id=?",
                (ws_id,),
            ).fetchone()
        if row is None:
            raise UnknownUser(f"no user {ws_id}")
        return UserRecord(row[0], row[1], row[2], bool(row[3]), row[4], row[5])

    def verify_password(self, ws_id: int, password: str) -> bool:
        """Uniformly False for bad password and unknown user alike."""
        with self._conn() as conn:
            row = conn.execute(
                "SELECT password_hash FROM users WHERE ws_id=?", (ws_id,)
            ).fetchone()
        if row is None:
            # Burn a comparable amount of work so timing does not reveal
            # user existence.
            check_password(password, hash_password("x"))
            return False
        return check_password(password, row[0])

    def set_user_mydb(self, ws_id: int, mydb_name: str, target_id: int) -> None:
        with self._conn() as conn:
            cur = conn.execute(
                "UPDATE users SET mydb_name=?, mydb_target=? "
                "WHERE ws_id=? AND mydb_name IS NULL",
                (mydb_name, target_id, ws_id),
            )
            if cur.rowcount == 0:
                existing = conn.execute(
                    "SELECT mydb_name FROM users WHERE ws_id=?", (ws_id,)
                ).fetchone()
                if existing is None:
                    raise UnknownUser(f"no user {ws_id}")

    def set_user_notify(self, ws_id: int, notify: bool) -> None:
        with self._conn() as conn:
            conn.execute("UPDATE users SET notify=? WHERE ws_id=?", (int(notify), ws_id))

    def mydb_counts_by_target(self) -> dict[int, int]:
        with self._conn() as conn:
            rows = conn.execute(
                "SELECT mydb_target, count(*) FROM users "
                "WHERE mydb_target IS NOT NULL GROUP BY mydb_target"
            ).fetchall()
        return {r[0]: r[1] for r in rows}

    def user_for_mydb(self, mydb_name: str) -> UserRecord:
        with self._conn() as conn:
            row = conn.execute(
                "SELECT ws_id FROM users WHERE lower(mydb_name)=lower(?)", (mydb_name,)
            ).fetchone()
        if row is None:
            raise UnknownUser(f"no scratch database {mydb_name}")
        return self.get_user(row[0])

    # -- targets ---------------------------------------------------------

    def register_target(self, target: ServerTarget) -> int:
        target.validate()
        try:
            os.makedirs(target.locator, exist_ok=True)
        except OSError as exc:
            raise UnreachableLocator(f"locator {target.locator!r}: {exc}") from exc
        if not os.path.isdir(target.locator):
            raise UnreachableLocator(f"locator {target.locator!r} is not a directory")
        with self._conn() as conn:
            claimed = {
                r[0].lower()
                for r in conn.execute("SELECT context FROM server_contexts").fetchall()
            }
            for ctx in target.context_names:
                if ctx.lower() in claimed:
                    raise DuplicateContext(f"context {ctx!r} already served")
            cur = conn.execute(
                "INSERT INTO servers(name, locator, max_concurrent, mydb_host) VALUES (?,?,?,?)",
                (target.name, target.locator, target.max_concurrent, int(target.mydb_host)),
            )
            target_id = cur.lastrowid
            for ctx in target.context_names:
                conn.execute(
                    "INSERT INTO server_contexts(target_id, context) VALUES (?,?)",
                    (target_id, ctx),
                )
        return target_id

    def add_context(self, target_id: int, context: str) -> None:
        with self._conn() as conn:
            row = conn.execute(
                "SELECT target_id FROM server_contexts WHERE context=?", (context,)
            ).fetchone()
            if row is not None:
                if row[0] == target_id:
                    return
                raise DuplicateContext(f"context {context!r} already served")
            conn.execute(
                "INSERT INTO server_contexts(target_id, context) VALUES (?,?)",
                (target_id, context),
            )

    def _target_from_row(self, conn: sqlite3.Connection, row: tuple) -> ServerTarget:
        contexts = tuple(
            r[0]
            for r in conn.execute(
                "SELECT context FROM server_contexts WHERE target_id=? ORDER BY context",
                (row[0],),
            ).fetchall()
        )
        return ServerTarget(
            target_id=row[0], name=row[1], locator=row[2],
            context_names=contexts, max_concurrent=row[3], mydb_host=bool(row[4]),
        )

    def get_target(self, target_id: int) -> ServerTarget:
        with self._conn() as conn:
            row = conn.execute(
                "SELECT target_id, name, locator, max_concurrent, mydb_host "
                "FROM servers WHERE target_id=?",
                (target_id,),
            ).fetchone()
            if row is None:
                raise UnknownTarget(f"no target {target_id}")
            return self._target_from_row(conn, row)

    def list_targets(self) -> list[ServerTarget]:
        with self._conn() as conn:
            rows = conn.execute(
                "SELECT target_id, name, locator, max_concurrent, mydb_host "
                "FROM servers ORDER BY target_id"
            ).fetchall()
            return [self._target_from_row(conn, r) for r in rows]

    def target_for_context(self, context: str) -> ServerTarget:
        with self._conn() as conn:
            row = conn.execute(
                "SELECT target_id FROM server_contexts WHERE context=?", (context,)
            ).fetchone()
        if row is None:
            raise UnknownContext(f"no target serves context {context!r}")
        return self.get_target(row[0])

    def known_contexts(self) -> list[str]:
        with self._conn() as conn:
            return [
                r[0]
                for r in conn.execute(
                    "SELECT context FROM server_contexts ORDER BY context"
                ).fetchall()
            ]

    # -- queues ----------------------------------------------------------

    def add_queue(self, queue: QueueSpec) -> None:
        queue.validate()
        existing = self.list_queues()
        sync = [q for q in existing if q.mode is QueueMode.SYNC]
        if queue.mode is QueueMode.SYNC and sync:
            raise ValueError("exactly one Sync queue is allowed")
        if queue.mode is QueueMode.ASYNC and sync and queue.quantum_s <= sync[0].quantum_s:
            raise ValueError("the Sync queue must have the smallest quantum")
        with self._conn() as conn:
            conn.execute(
                "INSERT INTO queues(queue_id, quantum_s, mode, max_rows) VALUES (?,?,?,?)",
                (queue.queue_id, queue.quantum_s, queue.mode.value, queue.max_rows),
            )

    def get_queue(self, queue_id: str) -> QueueSpec:
        with self._conn() as conn:
            row = conn.execute(
                "SELECT queue_id, quantum_s, mode, max_rows FROM queues WHERE queue_id=?",
                (queue_id,),
            ).fetchone()
        if row is None:
            raise UnknownQueue(f"no queue {queue_id!r}")
        return QueueSpec(row[0], row[1], QueueMode(row[2]), row[3])

    def list_queues(self) -> list[QueueSpec]:
        with self._conn() as conn:
            rows = conn.execute(
                "SELECT queue_id, quantum_s, mode, max_rows FROM queues ORDER BY quantum_s"
            ).fetchall()
        return [QueueSpec(r[0], r[1], QueueMode(r[2]), r[3]) for r in rows]

    def sync_queue(self) -> QueueSpec:
        for q in self.list_queues():
            if q.mode is QueueMode.SYNC:
                return q
        raise UnknownQueue("no Sync queue configured")

    def default_async_queue(self) -> QueueSpec:
        for q in self.list_queues():
            if q.mode is QueueMode.ASYNC:
                return q
        raise UnknownQueue("no Async queue configured")

    # -- groups and publishing --------------------------------------------

    def create_group(self, name: str, owner_ws: int) -> GroupRecord:
        with self._conn() as conn:
            cur = conn.execute(
                "INSERT INTO groups(name, owner_ws) VALUES (?,?)", (name, owner_ws)
            )
            group_id = cur.lastrowid
            conn.execute(
                "INSERT INTO group_members(group_id, ws_id) VALUES (?,?)",
                (group_id, owner_ws),
            )
        return GroupRecord(group_id, name, owner_ws, (owner_ws,))

    def add_member(self, group_id: int, ws_id: int) -> None:
        with self._conn() as conn:
            conn.execute(
                "INSERT OR IGNORE INTO group_members(group_id, ws_id) VALUES (?,?)",
                (group_id, ws_id),
            )

    def _group_members(self, conn: sqlite3.Connection, group_id: int) -> tuple[int, ...]:
        return tuple(
            r[0]
            for r in conn.execute(
                "SELECT ws_id FROM group_members WHERE group_id=? ORDER BY ws_id",
                (group_id,),
            ).fetchall()
        )

    def get_group(self, name: str) -> GroupRecord:
        with self._conn() as conn:
            row = conn.execute(
                "SELECT group_id, name, owner_ws FROM groups WHERE name=?", (name,)
            ).fetchone()
            if row is None:
                raise UnknownGroup(f"no group {name!r}")
            return GroupRecord(row[0], row[1], row[2], self._group_members(conn, row[0]))

    def groups_for_user(self, ws_id: int) -> list[GroupRecord]:
        with self._conn() as conn:
            rows = conn.execute(
                "SELECT g.group_id, g.name, g.owner_ws FROM groups g "
                "JOIN group_members m ON m.group_id = g.group_id "
                "WHERE m.ws_id=? ORDER BY g.group_id",
                (ws_id,),
            ).fetchall()
            return [
                GroupRecord(r[0], r[1], r[2], self._group_members(conn, r[0]))
                for r in rows
            ]

    def publish_table(self, group_id: int, publisher_ws: int, alias: str,
                      mydb_name: str, table_name: str,
                      now: int | None = None) -> PublishedTable:
        now = now if now is not None else now_ms()
        with self._conn() as conn:
            member = conn.execute(
                "SELECT 1 FROM group_members WHERE group_id=? AND ws_id=?",
                (group_id, publisher_ws),
            ).fetchone()
            if member is None:
                raise NotMember(f"user {publisher_ws} is not in group {group_id}")
            try:
                conn.execute(
                    "INSERT INTO published_tables"
                    "(group_id, publisher_ws, alias, mydb_name, table_name, published_at) "
                    "VALUES (?,?,?,?,?,?)",
                    (group_id, publisher_ws, alias, mydb_name, table_name, now),
                )
            except sqlite3.IntegrityError as exc:
                raise DuplicateAlias(
                    f"alias {alias!r} already published to group {group_id}"
                ) from exc
        return PublishedTable(group_id, publisher_ws, alias, mydb_name, table_name, now)

    def published_for_groups(self, group_ids: list[int]) -> list[PublishedTable]:
        if not group_ids:
            return []
        marks = ",".join("?" * len(group_ids))
        with self._conn() as conn:
            rows = conn.execute(
                "SELECT group_id, publisher_ws, alias, mydb_name, table_name, published_at "
                f"FROM published_tables WHERE group_id IN ({marks})",
                group_ids,
            ).fetchall()
        return [PublishedTable(*r) for r in rows]

    def publications_for_table(self, mydb_name: str, table_name: str) -> list[int]:
        with self._conn() as conn:
            rows = conn.execute(
                "SELECT group_id FROM published_tables "
                "WHERE lower(mydb_name)=lower(?) AND lower(table_name)=lower(?) "
                "ORDER BY group_id",
                (mydb_name, table_name),
            ).fetchall()
        return [r[0] for r in rows]

    def unpublish_table(self, mydb_name: str, table_name: str) -> int:
        with self._conn() as conn:
            cur = conn.execute(
                "DELETE FROM published_tables "
                "WHERE lower(mydb_name)=lower(?) AND lower(table_name)=lower(?)",
                (mydb_name, table_name),
            )
            return cur.rowcount

    # -- screening rules ---------------------------------------------------

    def list_rules(self) -> list[ScreenRule]:
        with self._conn() as conn:
            rows = conn.execute(
                "SELECT rule_id, pattern, message FROM screen_rules ORDER BY rule_id"
            ).fetchall()
        return [ScreenRule(*r) for r in rows]

    def add_rule(self, pattern: str, message: str) -> int:
        import re as _re

        _re.compile(pattern, _re.IGNORECASE)  # patterns must compile
        with self._conn() as conn:
            cur = conn.execute(
                "INSERT INTO screen_rules(pattern, message) VALUES (?,?)",
                (pattern, message),
            )
            return cur.lastrowid

    # -- jobs --------------------------------------------------------------

    def create_job(self, *, user_id: int, queue_id: str, target_id: int | None,
                   job_kind: JobKind, query_text: str = "", rewritten_text: str = "",
                   dest_mydb: str | None = None, dest_table: str | None = None,
                   params: dict | None = None, route: str | None = None,
                   context: str | None = None, state: JobState = JobState.READY,
                   now: int | None = None) -> JobRecord:
        now = now if now is not None else now_ms()
        with self._conn() as conn:
            cur = conn.execute(
                "INSERT INTO jobs(user_id, queue_id, target_id, job_kind, query_text, "
                "rewritten_text, dest_mydb, dest_table, state, t_submitted, params, route, context) "
                "VALUES (?,?,?,?,?,?,?,?,?,?,?,?,?)",
                (user_id, queue_id, target_id, job_kind.value, query_text,
                 rewritten_text, dest_mydb, dest_table, state.value, now,
                 json.dumps(params or {}), route, context),
            )
            job_id = cur.lastrowid
        return self.get_job(job_id)

    def get_job(self, job_id: int) -> JobRecord:
        with self._conn() as conn:
            row = conn.execute(
                f"SELECT {_JOB_COLUMNS} FROM jobs WHERE job_id=?", (job_id,)
            ).fetchone()
        if row is None:
            raise UnknownJob(f"no job {job_id}")
        return _job_from_row(row)

    def list_jobs(self, ws_id: int, *, state: JobState | None = None,
                  kind: JobKind | None = None, since: int | None = None,
                  until: int | None = None) -> list[JobRecord]:
        self.get_user(ws_id)  # UnknownUser for missing callers
        clauses = ["user_id=?"]
        args: list = [ws_id]
        if state is not None:
            clauses.append("state=?")
            args.append(state.value)
        if kind is not None:
            clauses.append("job_kind=?")
            args.append(kind.value)
        if since is not None:
            clauses.append("t_submitted>=?")
            args.append(since)
        if until is not None:
            clauses.append("t_submitted<?")
            args.append(until)
        sql = (
            f"SELECT {_JOB_COLUMNS} FROM jobs WHERE {' AND '.join(clauses)} "
            "ORDER BY t_submitted DESC, job_id DESC"
        )
        with self._conn() as conn:
            rows = conn.execute(sql, args).fetchall()
        return [_job_from_row(r) for r in rows]

    def transition_job(self, job_id: int, event: JobEvent, now: int | None = None, *,
                       error_msg: str | None = None, rows_out: int | None = None,
                       output_url: str | None = None) -> JobRecord:
        """Apply one lifecycle event with compare-and-set on the prior state.

        Raises IllegalTransition if the event is not legal from the state
        read, StaleState if a concurrent transition won the race.
        """
        now = now if now is not None else now_ms()
        job = self.get_job(job_id)
        updated = model.transition(
            job, event, now,
            error_msg=error_msg, rows_out=rows_out, output_url=output_url,
        )
        with self._conn() as conn:
            cur = conn.execute(
                "UPDATE jobs SET state=?, t_started=?, t_finished=?, rows_out=?, "
                "error_msg=?, output_url=? WHERE job_id=? AND state=?",
                (updated.state.value, updated.t_started, updated.t_finished,
                 updated.rows_out, updated.error_msg, updated.output_url,
                 job_id, job.state.value),
            )
            if cur.rowcount == 0:
                raise StaleState(
                    f"job {job_id}: state moved past {job.state.value} concurrently"
                )
        return updated

    def set_rows_out(self, job_id: int, rows_out: int) -> None:
        """Monotonic progress update, atomic and safe under races."""
        with self._conn() as conn:
            conn.execute(
                "UPDATE jobs SET rows_out=? WHERE job_id=? AND rows_out<=?",
                (rows_out, job_id, rows_out),
            )

    def set_route(self, job_id: int, route: str) -> None:
        """Record which execution path took the job (quick/private/wheel)."""
        with self._conn() as conn:
            conn.execute("UPDATE jobs SET route=? WHERE job_id=?", (route, job_id))

    def set_cancel_requested(self, job_id: int) -> None:
        with self._conn() as conn:
            conn.execute(
                "UPDATE jobs SET cancel_requested=1 WHERE job_id=?", (job_id,)
            )

    def clear_output_url(self, job_id: int) -> None:
        with self._conn() as conn:
            conn.execute("UPDATE jobs SET output_url=NULL WHERE job_id=?", (job_id,))

    def ready_jobs(self, *, target_id: int | None = None,
                   kind: JobKind | None = None, limit: int | None = None) -> list[JobRecord]:
        clauses = ["state=?"]
        args: list = [JobState.READY.value]
        if target_id is not None:
            clauses.append("target_id=?")
            args.append(target_id)
        if kind is not None:
            clauses.append("job_kind=?")
            args.append(kind.value)
        sql = (
            f"SELECT {_JOB_COLUMNS} FROM jobs WHERE {' AND '.join(clauses)} "
            "ORDER BY t_submitted ASC, job_id ASC"
        )
        if limit is not None:
            sql += f" LIMIT {int(limit)}"
        with self._conn() as conn:
            rows = conn.execute(sql, args).fetchall()
        return [_job_from_row(r) for r in rows]

    def started_jobs(self) -> list[JobRecord]:
        with self._conn() as conn:
            rows = conn.execute(
                f"SELECT {_JOB_COLUMNS} FROM jobs WHERE state=? "
                "ORDER BY t_started ASC, job_id ASC",
                (JobState.STARTED.value,),
            ).fetchall()
        return [_job_from_row(r) for r in rows]

    def running_count(self, target_id: int) -> int:
        with self._conn() as conn:
            return conn.execute(
                "SELECT count(*) FROM jobs WHERE state=? AND target_id=? AND job_kind=?",
                (JobState.STARTED.value, target_id, JobKind.QUERY.value),
            ).fetchone()[0]

    def cancel_requested_jobs(self) -> list[JobRecord]:
        with self._conn() as conn:
            rows = conn.execute(
                f"SELECT {_JOB_COLUMNS} FROM jobs WHERE cancel_requested=1 "
                "AND state IN (?,?) ORDER BY job_id",
                (JobState.READY.value, JobState.STARTED.value),
            ).fetchall()
        return [_job_from_row(r) for r in rows]

    def request_cancel(self, job_id: int, ws_id: int) -> JobRecord:
        """Flag a job for cancellation; Ready jobs cancel immediately.

        Idempotent over repeated calls; raises AlreadyTerminal only when the
        job ended in a non-canceled terminal state.
        """
        from .errors import NotOwner

        job = self.get_job(job_id)
        if job.user_id != ws_id:
            raise NotOwner(f"job {job_id} belongs to another user")
        if job.state is JobState.CANCELED:
            return job
        if job.state in model.TERMINAL_STATES:
            raise AlreadyTerminal(f"job {job_id} is {job.state.value}")
        self.set_cancel_requested(job_id)
        if job.state is JobState.READY:
            try:
                return self.transition_job(job_id, JobEvent.CANCEL)
            except StaleState:
                pass  # dispatched concurrently; the sweep finishes the cancel
        return self.get_job(job_id)

    # -- stats ---------------------------------------------------------------

    def record_stat(self, job_id: int, elapsed_s: float, rows: int, cpu_s: float,
                    t_finished: int) -> None:
        with self._conn() as conn:
            conn.execute(
                "INSERT INTO stats(job_id, elapsed_s, rows, cpu_s, t_finished) "
                "VALUES (?,?,?,?,?)",
                (job_id, elapsed_s, rows, max(cpu_s, 0.0), t_finished),
            )

    def list_stats(self, since: int | None = None, until: int | None = None) -> list[tuple]:
        clauses, args = ["1=1"], []
        if since is not None:
            clauses.append("t_finished>=?")
            args.append(since)
        if until is not None:
            clauses.append("t_finished<?")
            args.append(until)
        with self._conn() as conn:
            return conn.execute(
                "SELECT job_id, elapsed_s, rows, cpu_s, t_finished FROM stats "
                f"WHERE {' AND '.join(clauses)} ORDER BY t_finished",
                args,
            ).fetchall()

    # -- download tokens -------------------------------------------------------

    def create_download(self, job_id: int, path: str, now: int | None = None) -> str:
        token = secrets.token_urlsafe(16)
        now = now if now is not None else now_ms()
        with self._conn() as conn:
            conn.execute(
                "INSERT INTO downloads(token, job_id, path, created_at) VALUES (?,?,?,?)",
                (token, job_id, path, now),
            )
        return token

    def get_download(self, token: str) -> DownloadRecord | None:
        with self._conn() as conn:
            row = conn.execute(
                "SELECT token, job_id, path, created_at, purged_at FROM downloads "
                "WHERE token=?",
                (token,),
            ).fetchone()
        return DownloadRecord(*row) if row else None

    def expired_downloads(self, cutoff: int) -> list[DownloadRecord]:
        with self._conn() as conn:
            rows = conn.execute(
                "SELECT token, job_id, path, created_at, purged_at FROM downloads "
                "WHERE purged_at IS NULL AND created_at<?",
                (cutoff,),
            ).fetchall()
        return [DownloadRecord(*r) for r in rows]

    def mark_purged(self, token: str, now: int | None = None) -> None:
        now = now if now is not None else now_ms()
        with self._conn() as conn:
            conn.execute("UPDATE downloads SET purged_at=? WHERE token=?", (now, token))
