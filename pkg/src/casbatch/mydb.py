"""Per-user scratch databases.

Each user gets one private database, provisioned lazily on the
least-loaded eligible target and named after the numeric workspace id.
This module manages its tables: list/drop, CSV and VOTable import, export
jobs, group publishing, and the positional cross-match. Table creation
times live in a hidden sidecar table inside the scratch database itself,
stamped when a table is first created or first observed.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from typing import IO, Iterable, Iterator

from . import crossmatch, engine, formats
from .admindb import AdminDb
from .errors import (
    InvalidSubmission,
    MissingCoordinates,
    NoMyDbTarget,
    ParseError,
    QuotaExceeded,
    TableExists,
    UnknownTable,
)
from .model import (
    JobKind,
    JobRecord,
    PublishedTable,
    ServerTarget,
    UserRecord,
    now_ms,
)
from .sqltext import quote_ident

DEFAULT_QUOTA_BYTES = 500 * 1024 * 1024

_SIDECAR = "_casbatch_tables"


@dataclass(frozen=True, slots=True)
class MyDbTableInfo:
    name: str
    columns: list[tuple[str, str]]
    row_count: int
    created_at: int
    published_to: list[int]


def _chunks(rows: Iterable[tuple], size: int) -> Iterator[list[tuple]]:
    batch: list[tuple] = []
    for row in rows:
        batch.append(row)
        if len(batch) >= size:
            yield batch
            batch = []
    if batch:
        yield batch


def mydb_name_for(ws_id: int) -> str:
    return f"mydb_{ws_id:06d}"


class MyDbManager:
    """Scratch-database operations for all users, over one registry."""

    def __init__(self, admin: AdminDb, *, quota_bytes: int = DEFAULT_QUOTA_BYTES,
                 chunk_size: int = 1000, ra_col: str = "ra", dec_col: str = "dec"):
        self.admin = admin
        self.quota_bytes = quota_bytes
        self.chunk_size = chunk_size
        self.ra_col = ra_col
        self.dec_col = dec_col

    # -- provisioning -------------------------------------------------------

    def ensure_mydb(self, ws_id: int) -> tuple[str, ServerTarget]:
        """Idempotent: first call creates the database on the least-loaded
        eligible target; later calls return the recorded pair."""
        user = self.admin.get_user(ws_id)
        if user.mydb_name is not None:
            target = self.admin.get_target(user.mydb_target)
            self._touch(target, user.mydb_name)
            return user.mydb_name, target

        hosts = [t for t in self.admin.list_targets() if t.mydb_host]
        if not hosts:
            raise NoMyDbTarget("no registered target hosts scratch databases")
        counts = self.admin.mydb_counts_by_target()
        target = min(hosts, key=lambda t: (counts.get(t.target_id, 0), t.target_id))
        name = mydb_name_for(ws_id)
        self.admin.set_user_mydb(ws_id, name, target.target_id)
        # reread: a concurrent call may have won the null-guarded update
        user = self.admin.get_user(ws_id)
        target = self.admin.get_target(user.mydb_target)
        self._touch(target, user.mydb_name)
        return user.mydb_name, target

    def _touch(self, target: ServerTarget, name: str) -> None:
        path = engine.mydb_path(target.locator, name)
        if not os.path.exists(path):
            engine.connect(path).close()

    def path_for(self, ws_id: int) -> str:
        name, target = self.ensure_mydb(ws_id)
        return engine.mydb_path(target.locator, name)

    def _open(self, ws_id: int, *, read_only: bool = False):
        return engine.connect(self.path_for(ws_id), read_only=read_only)

    def _usage_bytes(self, ws_id: int) -> int:
        path = self.path_for(ws_id)
        total = 0
        for p in (path, path + "-wal"):
            if os.path.exists(p):
                total += os.path.getsize(p)
        return total

    # -- table catalog --------------------------------------------------------

    def _ensure_sidecar(self, conn) -> None:
        conn.execute(
            f"CREATE TABLE IF NOT EXISTS {_SIDECAR} "
            "(name TEXT PRIMARY KEY COLLATE NOCASE, created_at INTEGER NOT NULL)"
        )

    def _stamp(self, conn, name: str, when: int | None = None) -> None:
        self._ensure_sidecar(conn)
        conn.execute(
            f"INSERT OR IGNORE INTO {_SIDECAR}(name, created_at) VALUES (?,?)",
            (name, when if when is not None else now_ms()),
        )

    def _user_tables(self, conn) -> list[str]:
        rows = conn.execute(
            "SELECT name FROM sqlite_master WHERE type='table' ORDER BY name"
        ).fetchall()
        return [
            r[0] for r in rows
            if not r[0].startswith("sqlite_") and not r[0].startswith("_casbatch")
        ]

    def _info(self, conn, user: UserRecord, name: str) -> MyDbTableInfo:
        self._stamp(conn, name)
        created = conn.execute(
            f"SELECT created_at FROM {_SIDECAR} WHERE name=?", (name,)
        ).fetchone()[0]
        count = conn.execute(f"SELECT count(*) FROM {quote_ident(name)}").fetchone()[0]
        return MyDbTableInfo(
            name=name,
            columns=engine.table_columns(conn, name),
            row_count=count,
            created_at=created,
            published_to=self.admin.publications_for_table(user.mydb_name, name),
        )

    def list_tables(self, ws_id: int) -> list[MyDbTableInfo]:
        self.ensure_mydb(ws_id)
        user = self.admin.get_user(ws_id)
        conn = self._open(ws_id)
        try:
            infos = [self._info(conn, user, n) for n in self._user_tables(conn)]
            conn.commit()
            return infos
        finally:
            conn.close()

    def table_info(self, ws_id: int, table: str) -> MyDbTableInfo:
        self.ensure_mydb(ws_id)
        user = self.admin.get_user(ws_id)
        conn = self._open(ws_id)
        try:
            if not engine.table_exists(conn, table):
                raise UnknownTable(f"no table {table!r} in your scratch database")
            stored = next(
                n for n in self._user_tables(conn) if n.lower() == table.lower()
            )
            info = self._info(conn, user, stored)
            conn.commit()
            return info
        finally:
            conn.close()

    def drop_table(self, ws_id: int, table: str) -> None:
        """Drop the table and cascade away any group publications."""
        user = self.admin.get_user(ws_id)
        conn = self._open(ws_id)
        try:
            if not engine.table_exists(conn, table):
                raise UnknownTable(f"no table {table!r} in your scratch database")
            conn.execute(f"DROP TABLE {quote_ident(table)}")
            self._ensure_sidecar(conn)
            conn.execute(f"DELETE FROM {_SIDECAR} WHERE name=?", (table,))
            conn.commit()
        finally:
            conn.close()
        self.admin.unpublish_table(user.mydb_name, table)

    # -- import ------------------------------------------------------------------

    def import_table(self, ws_id: int, stream: IO, fmt: str,
                     table_name: str) -> MyDbTableInfo:
        if fmt not in formats.PARSERS:
            raise InvalidSubmission(
                f"unsupported import format {fmt!r}; use one of: "
                + ", ".join(sorted(formats.PARSERS))
            )
        self.ensure_mydb(ws_id)
        if self._usage_bytes(ws_id) > self.quota_bytes:
            raise QuotaExceeded("scratch database is already over quota")

        columns, rows = formats.PARSERS[fmt](stream)
        conn = self._open(ws_id)
        try:
            if engine.table_exists(conn, table_name):
                raise TableExists(f"table {table_name!r} already exists")
            engine.create_table(conn, table_name, columns)
            conn.commit()
            try:
                for batch in _chunks(rows, self.chunk_size):
                    with conn:
                        engine.insert_rows(conn, table_name, len(columns), batch)
                    if self._usage_bytes(ws_id) > self.quota_bytes:
                        raise QuotaExceeded(
                            f"import of {table_name!r} would exceed the "
                            f"{self.quota_bytes} byte quota"
                        )
            except (ParseError, QuotaExceeded):
                # imports are all-or-nothing, unlike streamed query results
                conn.execute(f"DROP TABLE {quote_ident(table_name)}")
                conn.commit()
                raise
            self._stamp(conn, table_name)
            conn.commit()
            user = self.admin.get_user(ws_id)
            return self._info(conn, user, table_name)
        finally:
            conn.close()

    # -- export --------------------------------------------------------------------

    def export_table(self, ws_id: int, table: str, fmt: str) -> JobRecord:
        """Queue an export; the scheduler materializes the file and posts
        the download token on the job."""
        if fmt not in formats.WRITERS:
            raise InvalidSubmission(
                f"unsupported export format {fmt!r}; use one of: "
                + ", ".join(sorted(formats.WRITERS))
            )
        self.ensure_mydb(ws_id)
        user = self.admin.get_user(ws_id)
        conn = self._open(ws_id, read_only=True)
        try:
            if not engine.table_exists(conn, table):
                raise UnknownTable(f"no table {table!r} in your scratch database")
        finally:
            conn.close()
        queue = self.admin.default_async_queue()
        return self.admin.create_job(
            user_id=ws_id, queue_id=queue.queue_id, target_id=user.mydb_target,
            job_kind=JobKind.EXPORT, params={"table": table, "format": fmt},
        )

    def materialize_export(self, job: JobRecord) -> tuple[str, int]:
        """Write the export file for a Started export job; returns
        (path, row count). Runs on the scheduler's export slot."""
        table = job.params["table"]
        fmt = job.params["format"]
        target = self.admin.get_target(job.target_id)
        src = engine.connect(
            engine.mydb_path(target.locator, self.admin.get_user(job.user_id).mydb_name),
            read_only=True,
        )
        try:
            if not engine.table_exists(src, table):
                raise UnknownTable(f"table {table!r} vanished before export")
            columns = engine.table_columns(src, table)
            cursor = src.execute(f"SELECT * FROM {quote_ident(table)}")

            def stream() -> Iterator[tuple]:
                while True:
                    batch = cursor.fetchmany(self.chunk_size)
                    if not batch:
                        return
                    yield from batch

            exports = os.path.join(target.locator, "exports")
            os.makedirs(exports, exist_ok=True)
            path = os.path.join(
                exports, f"job_{job.job_id}.{formats.EXTENSIONS[fmt]}"
            )
            with open(path, "w", encoding="utf-8", newline="") as fh:
                count = formats.WRITERS[fmt](fh, columns, stream())
            return path, count
        finally:
            src.close()

    # -- publishing -------------------------------------------------------------------

    def publish(self, ws_id: int, table: str, group_name: str) -> PublishedTable:
        self.ensure_mydb(ws_id)
        user = self.admin.get_user(ws_id)
        conn = self._open(ws_id, read_only=True)
        try:
            if not engine.table_exists(conn, table):
                raise UnknownTable(f"no table {table!r} in your scratch database")
        finally:
            conn.close()
        group = self.admin.get_group(group_name)
        return self.admin.publish_table(
            group.group_id, ws_id, table, user.mydb_name, table
        )

    # -- cross-match --------------------------------------------------------------------

    def neighbors(self, ws_id: int, mytable: str, target_context: str,
                  target_table: str, radius_arcmin: float) -> MyDbTableInfo:
        """Match a scratch table against a catalog table positionally.

        Creates `<mytable>_neighbors` (my_id, match_id, dist_arcmin) with
        one row per pair separated by at most the radius; ids are engine
        rowids on both sides.
        """
        crossmatch.check_radius(radius_arcmin)
        self.ensure_mydb(ws_id)
        user = self.admin.get_user(ws_id)
        result_name = f"{mytable}_neighbors"

        target = self.admin.target_for_context(target_context)
        cat_path = engine.context_path(target.locator, target_context)

        conn = self._open(ws_id)
        try:
            if not engine.table_exists(conn, mytable):
                raise UnknownTable(f"no table {mytable!r} in your scratch database")
            if engine.table_exists(conn, result_name):
                raise TableExists(f"table {result_name!r} already exists; drop it first")
            have = {c[0].lower() for c in engine.table_columns(conn, mytable)}
            if self.ra_col.lower() not in have or self.dec_col.lower() not in have:
                raise MissingCoordinates(
                    f"table {mytable!r} lacks {self.ra_col!r}/{self.dec_col!r} columns"
                )
            uploads = self._positions(conn, mytable)

            cat = engine.connect(cat_path, read_only=True)
            try:
                if not engine.table_exists(cat, target_table):
                    raise UnknownTable(
                        f"no table {target_table!r} in context {target_context!r}"
                    )
                catalog = self._positions(cat, target_table)
            finally:
                cat.close()

            pairs = crossmatch.neighbors_pairs(uploads, catalog, radius_arcmin)
            engine.create_table(conn, result_name, [
                ("my_id", "integer"), ("match_id", "integer"),
                ("dist_arcmin", "float"),
            ])
            for batch in _chunks(iter(pairs), self.chunk_size):
                with conn:
                    engine.insert_rows(conn, result_name, 3, batch)
            self._stamp(conn, result_name)
            conn.commit()
            return self._info(conn, user, result_name)
        finally:
            conn.close()

    def _positions(self, conn, table: str) -> list[tuple[int, float, float]]:
        ra_q = quote_ident(self.ra_col)
        dec_q = quote_ident(self.dec_col)
        out: list[tuple[int, float, float]] = []
        cur = conn.execute(
            f"SELECT rowid, {ra_q}, {dec_q} FROM {quote_ident(table)}"
        )
        for rid, ra, dec in cur:
            if ra is None or dec is None:
                continue
            try:
                out.append((rid, float(ra), float(dec)))
            except (TypeError, ValueError):
                raise ParseError(
                    f"table {table!r} row {rid}: non-numeric coordinates"
                ) from None
        return out
