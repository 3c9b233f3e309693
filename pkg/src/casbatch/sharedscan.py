"""Shared full-table scans: one revolving wheel, many riders.

The wheel divides a catalog table into contiguous rowid buckets and steps
over them forever (while riders are aboard). A rider is an eligible
filter/projection query; it boards at the next bucket boundary, sees every
bucket exactly once, and leaves after one full revolution. K overlapping
riders thus cost one shared scan plus the boarding span instead of K scans.

Bucket rows are read from disk once per step into a private in-memory
table (with original rowids preserved), and each rider's SQL runs against
that copy, so arbitrary scalar predicates work without rereading the disk.
"""

from __future__ import annotations

import sqlite3
import threading
from dataclasses import dataclass, field

from . import engine, sqltext
from .errors import Ineligible
from .executor import RowSet, infer_schema, run_quick
from .sqltext import quote_ident

DEFAULT_BUCKETS = 64

_AGGREGATES = {"count", "sum", "avg", "min", "max", "total", "group_concat", "string_agg"}
_FORBIDDEN = {"join", "union", "intersect", "except", "group", "order", "having",
              "limit", "offset", "over", "select", "distinct", "top"}
_ROWID_NAMES = {"rowid", "oid", "_rowid_"}


@dataclass(frozen=True, slots=True)
class ScanQuery:
    """An eligible single-table scan, split into its reusable parts."""

    context: str | None
    table: str
    projection: str
    predicate: str | None

    def sql_over(self, table_expr: str) -> str:
        where = f" WHERE {self.predicate}" if self.predicate else ""
        return f"SELECT {self.projection} FROM {table_expr}{where}"


def eligible_scan(clean_sql: str) -> ScanQuery | None:
    """Classify a query as a shareable scan, or None.

    Eligible means: one SELECT over one table, plain or scalar-function
    projection, no aggregates, no joins or set operations, no ordering or
    row caps, and no rowid games (bucket copies renumber nothing, but the
    rule is cheap insurance against future bucketing changes).
    """
    tokens = sqltext.tokenize(clean_sql)
    sig = list(sqltext.significant(tokens))
    if sig and sig[-1][1].text == ";":
        sig = sig[:-1]
    if not sig or (sig[0][1].kind, sig[0][1].text.lower()) != ("ident", "select"):
        return None

    from_at = None
    for k in range(1, len(sig)):
        tok = sig[k][1]
        if tok.kind == "ident" and tok.text.lower() == "from":
            from_at = k
            break
        word = tok.text.lower() if tok.kind == "ident" else None
        if word in _FORBIDDEN or word in _ROWID_NAMES:
            return None
        if tok.text == ".":
            # qualified names would dangle once the scan runs over the
            # bucket copy
            return None
        if tok.text == "(":
            name = sqltext.ident_value(sig[k - 1][1])
            if name is not None and name.lower() in _AGGREGATES:
                return None
    if from_at is None or from_at == 1:
        return None
    projection = clean_sql[sig[0][1].end:sig[from_at][1].pos].strip()

    k = from_at + 1
    if k >= len(sig):
        return None
    t1 = sqltext.ident_value(sig[k][1])
    if t1 is None:
        return None
    context, table = None, t1
    if k + 1 < len(sig) and sig[k + 1][1].text == ".":
        t2 = sqltext.ident_value(sig[k + 2][1]) if k + 2 < len(sig) else None
        if t2 is None:
            return None
        context, table = t1, t2
        k += 2
    k += 1

    predicate = None
    if k < len(sig):
        tok = sig[k][1]
        if not (tok.kind == "ident" and tok.text.lower() == "where"):
            return None  # alias, comma, join, anything else
        rest = sig[k + 1:]
        if not rest:
            return None
        for _, t in rest:
            word = t.text.lower() if t.kind == "ident" else None
            if word in _FORBIDDEN or word in _ROWID_NAMES or word in _AGGREGATES:
                return None
            if t.text in (";", "."):
                return None
        predicate = clean_sql[rest[0][1].pos:rest[-1][1].end].strip()
    return ScanQuery(context, table, projection, predicate)


class ListSink:
    """Collects rider output in memory; the test- and quick-lane sink."""

    def __init__(self):
        self.columns: list[tuple[str, str]] | None = None
        self.rows: list[tuple] = []
        self.finished = False
        self.error: Exception | None = None

    def ensure(self, columns):
        self.columns = columns

    def write(self, rows):
        self.rows.extend(rows)

    def finish(self):
        self.finished = True

    def fail(self, exc):
        self.error = exc


@dataclass(slots=True)
class Rider:
    rider_id: int
    scan: ScanQuery
    sink: object
    boarded_at: int | None = None
    buckets_seen: int = 0
    trace: list[int] = field(default_factory=list)
    ensured: bool = False


@dataclass(frozen=True, slots=True)
class StepReport:
    bucket: int
    rows_scanned: int
    finished_riders: tuple[int, ...]
    failed_riders: tuple[tuple[int, str], ...] = ()


class ScanWheel:
    """One wheel per (catalog file, table); stepped by a single driver."""

    def __init__(self, catalog_path: str, table: str,
                 n_buckets: int = DEFAULT_BUCKETS):
        if n_buckets < 1:
            raise ValueError("n_buckets must be >= 1")
        self.table = table
        self.n_buckets = n_buckets
        self.position = 0
        self.revolutions = 0          # buckets processed, ever
        self.riders_served = 0
        self._conn = engine.connect(catalog_path, read_only=True)
        self._riders: dict[int, Rider] = {}
        self._pending: list[Rider] = []
        self._lock = threading.Lock()
        self._next_id = 1

        q = quote_ident(table)
        lo, hi = self._conn.execute(
            f"SELECT min(rowid), max(rowid) FROM {q}"
        ).fetchone()
        self._bounds = (lo, hi)
        self._span = 0 if lo is None else max(1, (hi - lo + 1 + n_buckets - 1) // n_buckets)
        info = self._conn.execute(f"PRAGMA table_info({q})").fetchall()
        # declared types only; never the pk flag, so bucket rowids stay free
        # to mirror the originals
        self._columns = [(r[1], r[2] or "") for r in info]

    def close(self):
        self._conn.close()

    @property
    def bucket_reads(self) -> int:
        return self.revolutions

    @property
    def io_savings_ratio(self) -> float:
        """Standalone bucket reads the served riders would have cost,
        relative to reads actually made."""
        if self.revolutions == 0:
            return 1.0
        return (self.riders_served * self.n_buckets) / self.revolutions

    @property
    def rider_count(self) -> int:
        with self._lock:
            return len(self._riders) + len(self._pending)

    @property
    def riders(self) -> list[Rider]:
        return list(self._riders.values())

    def admit(self, query: str | ScanQuery, sink) -> int:
        """Queue a rider; it boards at the next bucket boundary."""
        scan = eligible_scan(query) if isinstance(query, str) else query
        if scan is None:
            raise Ineligible("query is not a shareable single-table scan")
        if scan.table.lower() != self.table.lower():
            raise Ineligible(f"wheel scans {self.table!r}, not {scan.table!r}")
        with self._lock:
            rider = Rider(self._next_id, scan, sink)
            self._next_id += 1
            self._pending.append(rider)
            return rider.rider_id

    def eject(self, rider_id: int) -> bool:
        """Remove a rider without finishing it (cancellation path)."""
        with self._lock:
            for i, r in enumerate(self._pending):
                if r.rider_id == rider_id:
                    del self._pending[i]
                    return True
            return self._riders.pop(rider_id, None) is not None

    def _board_pending(self) -> None:
        with self._lock:
            boarding, self._pending = self._pending, []
        for rider in boarding:
            rider.boarded_at = self.position
            self._riders[rider.rider_id] = rider

    def _read_bucket(self) -> tuple[list[tuple], sqlite3.Connection]:
        # engine.connect, not a bare connection: riders must see the same
        # SQL surface (registered functions) as a private scan would
        mem = engine.connect(":memory:")
        cols = ", ".join(f"{quote_ident(n)} {t}" for n, t in self._columns)
        mem.execute(f"CREATE TABLE bucket ({cols})")
        lo, _ = self._bounds
        rows: list[tuple] = []
        if lo is not None:
            b_lo = lo + self.position * self._span
            b_hi = b_lo + self._span - 1
            names = ", ".join(quote_ident(n) for n, _ in self._columns)
            rows = self._conn.execute(
                f"SELECT rowid, {names} FROM {quote_ident(self.table)} "
                "WHERE rowid BETWEEN ? AND ?",
                (b_lo, b_hi),
            ).fetchall()
            if rows:
                marks = ", ".join("?" * (len(self._columns) + 1))
                mem.executemany(
                    f"INSERT INTO bucket(rowid, {names}) VALUES ({marks})", rows
                )
        return rows, mem

    def step(self) -> StepReport:
        """Process the current bucket for every rider, then advance."""
        self._board_pending()
        if not self._riders:
            raise ValueError("step() with no riders aboard")
        bucket = self.position
        rows, mem = self._read_bucket()

        finished: list[int] = []
        failed: list[tuple[int, str]] = []
        try:
            for rider in list(self._riders.values()):
                try:
                    cur = mem.execute(rider.scan.sql_over("bucket"))
                    matches = cur.fetchall()
                    # type the sink from the first bucket that matches, so
                    # an empty lead-in cannot degrade the columns to text
                    if matches and not rider.ensured:
                        rider.sink.ensure(infer_schema(cur, matches))
                        rider.ensured = True
                    if matches:
                        rider.sink.write(matches)
                    if rider.buckets_seen + 1 == self.n_buckets and not rider.ensured:
                        rider.sink.ensure(infer_schema(cur, []))
                        rider.ensured = True
                except Exception as exc:  # a rider must not take the wheel down
                    try:
                        rider.sink.fail(exc)
                    except Exception:
                        pass
                    failed.append((rider.rider_id, str(exc)))
                    del self._riders[rider.rider_id]
                    continue
                rider.buckets_seen += 1
                rider.trace.append(bucket)
                if rider.buckets_seen == self.n_buckets:
                    rider.sink.finish()
                    finished.append(rider.rider_id)
                    del self._riders[rider.rider_id]
                    self.riders_served += 1
        finally:
            mem.close()

        self.revolutions += 1
        self.position = (self.position + 1) % self.n_buckets
        return StepReport(bucket, len(rows), tuple(finished), tuple(failed))


def result_equivalence_oracle(catalog_path: str, scan: ScanQuery) -> RowSet:
    """Standalone single scan of the same filter/projection (test oracle)."""
    conn = engine.connect(catalog_path, read_only=True)
    try:
        return run_quick(conn, scan.sql_over(quote_ident(scan.table)),
                         quantum_s=None, max_rows=None)
    finally:
        conn.close()
