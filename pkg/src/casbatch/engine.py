"""SQLite plumbing: connections, attachments, UDFs, and the dialect shim.

Every engine-specific assumption lives here so that portability is a data
change (a new target row) plus, at worst, edits to this one module.
"""

from __future__ import annotations

import os
import re
import sqlite3
import time

from . import sqltext
from .errors import EngineError
from .sqltext import Token, quote_ident

# Canonical column types; everything the system stores maps onto these.
CANONICAL_TYPES = ("integer", "float", "text", "timestamp")

_CANONICAL_TO_SQL = {
    "integer": "INTEGER",
    "float": "REAL",
    "text": "TEXT",
    "timestamp": "TEXT",
}

_DECL_TO_CANONICAL = [
    (re.compile(r"int", re.I), "integer"),
    (re.compile(r"real|floa|doub", re.I), "float"),
    (re.compile(r"timestamp|datetime", re.I), "timestamp"),
]


def canonical_to_sql(canonical: str) -> str:
    return _CANONICAL_TO_SQL[canonical]


def decltype_to_canonical(decl: str | None) -> str:
    if decl:
        for rx, canon in _DECL_TO_CANONICAL:
            if rx.search(decl):
                return canon
    return "text"


def python_to_canonical(value: object) -> str | None:
    """Canonical type of a sampled Python value; None when undecidable."""
    if value is None:
        return None
    if isinstance(value, bool) or isinstance(value, int):
        return "integer"
    if isinstance(value, float):
        return "float"
    return "text"


def _sleep_ms(ms: float) -> float:
    time.sleep(max(ms, 0) / 1000.0)
    return ms


def connect(path: str, *, read_only: bool = False) -> sqlite3.Connection:
    """Open a database with the service's standard pragmas and UDFs.

    check_same_thread stays off because the stop path interrupts a
    connection from the sweep thread; each connection is otherwise used by
    a single thread.
    """
    if read_only:
        uri = f"file:{path}?mode=ro"
        conn = sqlite3.connect(uri, uri=True, check_same_thread=False, timeout=30)
    else:
        conn = sqlite3.connect(path, check_same_thread=False, timeout=30)
        conn.execute("PRAGMA journal_mode=WAL")
        conn.execute("PRAGMA synchronous=NORMAL")
    conn.execute("PRAGMA foreign_keys=ON")
    conn.create_function("sleep_ms", 1, _sleep_ms)
    return conn


def attach(conn: sqlite3.Connection, path: str, alias: str, *, read_only: bool = True) -> None:
    target = f"file:{path}?mode=ro" if read_only else path
    conn.execute(f"ATTACH DATABASE ? AS {quote_ident(alias)}", (target,))


def context_path(locator: str, context: str) -> str:
    return os.path.join(locator, f"{context}.db")


def mydb_path(locator: str, mydb_name: str) -> str:
    return os.path.join(locator, f"{mydb_name}.db")


_MYDB_PHYSICAL_RE = re.compile(r"^mydb_\d{6,}$", re.I)


def collect_mydb_refs(sql: str) -> set[str]:
    """Physical scratch-db names referenced as `mydb_NNNNNN.table` in sql."""
    refs: set[str] = set()
    tokens = sqltext.tokenize(sql)
    sig = [(i, t) for i, t in sqltext.significant(tokens)]
    for k, (_, tok) in enumerate(sig):
        name = sqltext.ident_value(tok)
        if name and _MYDB_PHYSICAL_RE.match(name):
            if k + 1 < len(sig) and sig[k + 1][1].text == ".":
                refs.add(name.lower())
    return refs


def to_engine_sql(sql: str) -> str:
    """Translate the accepted dialect to the engine's: `SELECT TOP n` -> LIMIT n.

    Only the outermost select-list TOP is translated; a query that already
    carries LIMIT alongside TOP is left for the engine to reject.
    """
    tokens = sqltext.tokenize(sql)
    sig = list(sqltext.significant(tokens))
    if not sig:
        return sql
    limit_n: str | None = None
    drop: set[int] = set()
    for k, (idx, tok) in enumerate(sig):
        if tok.kind != "ident" or tok.text.lower() != "select":
            continue
        j = k + 1
        if j < len(sig) and sig[j][1].kind == "ident" and sig[j][1].text.lower() in ("distinct", "all"):
            j += 1
        if j < len(sig) and sig[j][1].kind == "ident" and sig[j][1].text.lower() == "top":
            n = j + 1
            if n < len(sig) and sig[n][1].kind == "number":
                limit_n = sig[n][1].text
                drop.update((sig[j][0], sig[n][0]))
        break  # outermost SELECT only
    if limit_n is None:
        return sql
    out: list[str] = []
    skip_ws = False
    for i, tok in enumerate(tokens):
        if i in drop:
            skip_ws = True
            continue
        if skip_ws and tok.kind == "ws":
            skip_ws = False
            continue
        skip_ws = False
        out.append(tok.text)
    rewritten = "".join(out).rstrip()
    if rewritten.endswith(";"):
        rewritten = rewritten[:-1].rstrip()
    return f"{rewritten} LIMIT {limit_n}"


def execute(conn: sqlite3.Connection, sql: str, params: tuple = ()) -> sqlite3.Cursor:
    """Execute with engine errors normalized to EngineError, message intact."""
    try:
        return conn.execute(sql, params)
    except sqlite3.Error as exc:
        raise EngineError(str(exc)) from exc


def fetch_chunk(cursor: sqlite3.Cursor, n: int | None = None) -> list[tuple]:
    """Fetch rows with errors normalized; rows materialize lazily, so an
    interrupt can surface here rather than at execute()."""
    try:
        return cursor.fetchall() if n is None else cursor.fetchmany(n)
    except sqlite3.Error as exc:
        raise EngineError(str(exc)) from exc


def table_exists(conn: sqlite3.Connection, name: str, schema: str = "main") -> bool:
    row = conn.execute(
        f"SELECT 1 FROM {quote_ident(schema)}.sqlite_master "
        "WHERE type IN ('table','view') AND lower(name)=lower(?)",
        (name,),
    ).fetchone()
    return row is not None


def table_columns(conn: sqlite3.Connection, name: str, schema: str = "main") -> list[tuple[str, str]]:
    """(name, canonical type) pairs for a stored table."""
    rows = conn.execute(
        f"PRAGMA {quote_ident(schema)}.table_info({quote_ident(name)})"
    ).fetchall()
    return [(r[1], decltype_to_canonical(r[2])) for r in rows]


def create_table(conn: sqlite3.Connection, name: str, columns: list[tuple[str, str]],
                 schema: str = "main") -> None:
    cols = ", ".join(f"{quote_ident(n)} {canonical_to_sql(t)}" for n, t in columns)
    conn.execute(f"CREATE TABLE {quote_ident(schema)}.{quote_ident(name)} ({cols})")


def insert_rows(conn: sqlite3.Connection, name: str, n_columns: int, rows: list[tuple],
                schema: str = "main") -> None:
    placeholders = ", ".join("?" * n_columns)
    conn.executemany(
        f"INSERT INTO {quote_ident(schema)}.{quote_ident(name)} VALUES ({placeholders})",
        rows,
    )
