"""Query execution: the quick synchronous lane and the streaming async lane.

Quick execution runs under a short quantum and a row cap, returning rows
directly. Async execution creates the destination table in the user's
scratch database and streams the source cursor into it chunk by chunk, so
memory stays bounded by chunk size and progress is visible (and kept) even
when the run dies partway.
"""

from __future__ import annotations

import re
import threading
from dataclasses import dataclass, field

from . import engine
from .errors import EngineError, QuantumExceeded, Stopped, TableExists
from .sqltext import is_plain_ident


@dataclass(frozen=True, slots=True)
class RowSet:
    columns: list[tuple[str, str]]    # (name, canonical type)
    rows: list[tuple]
    truncated: bool = False


@dataclass(slots=True)
class StopToken:
    """Cooperative stop flag with a reason, shared worker/sweep."""

    reason: str | None = None
    _event: threading.Event = field(default_factory=threading.Event)

    def trip(self, reason: str) -> None:
        self.reason = reason
        self._event.set()

    @property
    def tripped(self) -> bool:
        return self._event.is_set()


_INTERRUPTED_RE = re.compile(r"\binterrupt", re.I)


def infer_schema(cursor, sample_rows: list[tuple] | None = None) -> list[tuple[str, str]]:
    """Column (name, canonical type) list for a result cursor.

    Unnamed or expression-derived names become col1, col2, ...; collisions
    get _2, _3 suffixes. Types are sniffed from the sample rows since the
    engine reports none for computed columns; a column with no non-null
    sample stays text.
    """
    description = cursor.description or []
    names: list[str] = []
    seen: set[str] = set()
    for i, col in enumerate(description):
        raw = col[0] if col[0] else ""
        name = raw if is_plain_ident(raw) else f"col{i + 1}"
        candidate, n = name, 1
        while candidate.lower() in seen:
            n += 1
            candidate = f"{name}_{n}"
        names.append(candidate)
        seen.add(candidate.lower())

    types = [None] * len(names)
    for row in sample_rows or []:
        for i, value in enumerate(row):
            if types[i] is None:
                types[i] = engine.python_to_canonical(value)
        if all(t is not None for t in types):
            break
    return [(n, t or "text") for n, t in zip(names, types)]


def run_quick(conn, clean_sql: str, *, quantum_s: float | None = 60.0,
              max_rows: int | None = 100_000) -> RowSet:
    """Synchronous execution with a row cap and a wall-clock quantum.

    The connection is interrupted when the quantum expires, so even a
    single long-running statement stops near the deadline. Results past
    max_rows are dropped and the set comes back flagged truncated.
    """
    timer: threading.Timer | None = None
    if quantum_s is not None:
        timer = threading.Timer(quantum_s, conn.interrupt)
        timer.daemon = True
        timer.start()
    try:
        cursor = engine.execute(conn, engine.to_engine_sql(clean_sql))
        if max_rows is None:
            rows = engine.fetch_chunk(cursor)
            truncated = False
        else:
            rows = engine.fetch_chunk(cursor, max_rows)
            truncated = bool(engine.fetch_chunk(cursor, 1))
    except EngineError as exc:
        if _INTERRUPTED_RE.search(str(exc)):
            raise QuantumExceeded(
                f"query exceeded its {quantum_s:g}s quantum"
            ) from exc
        raise
    finally:
        if timer is not None:
            timer.cancel()
    return RowSet(infer_schema(cursor, rows), rows, truncated)


def run_async(source_conn, clean_sql: str, dest_path: str, dest_table: str, *,
              chunk_size: int = 1000, progress=None,
              stop: StopToken | None = None) -> int:
    """Stream a query's result into a new table in the destination database.

    Each chunk of chunk_size rows is inserted in its own transaction before
    the next is read, so peak memory tracks the chunk, the destination row
    count only ever grows in chunk multiples, and whatever was inserted
    before a failure stays queryable.
    """
    dest_conn = engine.connect(dest_path)
    try:
        if engine.table_exists(dest_conn, dest_table):
            raise TableExists(f"table {dest_table!r} already exists in the scratch database")

        def check_stop() -> None:
            if stop is not None and stop.tripped:
                raise Stopped(stop.reason or "stopped")

        def translate(exc: EngineError) -> Exception:
            if stop is not None and stop.tripped and _INTERRUPTED_RE.search(str(exc)):
                return Stopped(stop.reason or "stopped")
            return exc

        check_stop()
        try:
            cursor = engine.execute(source_conn, engine.to_engine_sql(clean_sql))
            batch = engine.fetch_chunk(cursor, chunk_size)
        except EngineError as exc:
            raise translate(exc) from exc
        columns = infer_schema(cursor, batch)
        engine.create_table(dest_conn, dest_table, columns)

        total = 0
        while batch:
            check_stop()
            with dest_conn:
                engine.insert_rows(dest_conn, dest_table, len(columns), batch)
            total += len(batch)
            if progress is not None:
                progress(total)
            try:
                batch = engine.fetch_chunk(cursor, chunk_size)
            except EngineError as exc:
                raise translate(exc) from exc
        return total
    finally:
        dest_conn.close()
