"""Deterministic synthetic sky catalogs.

Stands in for survey data so the whole stack runs at desk scale. Values
come from a counter-based RNG keyed on the seed and jumped per fixed-size
block, which buys two properties worth keeping: the same (n_rows, seed)
always yields the same rows no matter how the writer batches them, and
disjoint row ranges can be generated in parallel without coordination.
"""

from __future__ import annotations

import hashlib
import os
from dataclasses import dataclass
from typing import Iterator

import numpy as np

from . import engine
from .admindb import AdminDb
from .errors import DuplicateContext, TableExists, UnreachableLocator

TABLE = "galaxy"
BLOCK_ROWS = 65536          # RNG jump granularity; not a write batch size
MAG_LO, MAG_HI = 14.0, 26.0


@dataclass(frozen=True, slots=True)
class CatalogSpec:
    n_rows: int
    seed: int

    def validate(self) -> None:
        if self.n_rows < 0:
            raise ValueError("n_rows must be nonnegative")
        if self.seed < 0:
            raise ValueError("seed must be a nonnegative integer")


def _blocks(spec: CatalogSpec) -> Iterator[tuple[int, np.ndarray]]:
    """Yield (first_obj_id, columns array) per RNG block.

    Each block draws its uniforms from an independently jumped stream, and
    a partial block is a prefix of the full one, so row i of the catalog
    never depends on n_rows.
    """
    for block in range(0, (spec.n_rows + BLOCK_ROWS - 1) // BLOCK_ROWS):
        start = block * BLOCK_ROWS
        count = min(BLOCK_ROWS, spec.n_rows - start)
        gen = np.random.Generator(np.random.Philox(key=spec.seed).jumped(block))
        u = gen.random((count, 5))
        cols = np.empty((count, 5))
        cols[:, 0] = 360.0 * u[:, 0]                            # ra
        cols[:, 1] = np.degrees(np.arcsin(2.0 * u[:, 1] - 1.0))  # dec, cos density
        cols[:, 2:5] = MAG_LO + (MAG_HI - MAG_LO) * u[:, 2:5]   # r, g, i
        yield start + 1, cols


def write_catalog(path: str, spec: CatalogSpec, *, table: str = TABLE) -> int:
    """Create and fill the catalog table in the database at path."""
    spec.validate()
    conn = engine.connect(path)
    try:
        if engine.table_exists(conn, table):
            raise TableExists(f"table {table!r} already exists in {path}")
        conn.execute(
            f"CREATE TABLE {table} (obj_id INTEGER PRIMARY KEY, "
            "ra REAL, dec REAL, r REAL, g REAL, i REAL)"
        )
        for first_id, cols in _blocks(spec):
            ids = range(first_id, first_id + len(cols))
            rows = [(i, *v) for i, v in zip(ids, cols.tolist())]
            with conn:
                conn.executemany(
                    f"INSERT INTO {table} VALUES (?,?,?,?,?,?)", rows
                )
        conn.commit()
    finally:
        conn.close()
    return spec.n_rows


def install(admin: AdminDb, target_id: int, context: str,
            spec: CatalogSpec) -> str:
    """Generate a catalog and register it as a context on a live target.

    Nothing here needs a service restart: the scheduler and rewriter read
    contexts from the admin database on every use. Returns the db path.
    """
    target = admin.get_target(target_id)
    try:
        os.makedirs(target.locator, exist_ok=True)
    except OSError as exc:
        raise UnreachableLocator(f"cannot create {target.locator}: {exc}") from exc
    path = engine.context_path(target.locator, context)
    if os.path.exists(path):
        raise DuplicateContext(f"context file {path} already exists")
    try:
        write_catalog(path, spec)
        admin.add_context(target_id, context)
    except BaseException:
        if os.path.exists(path):
            os.remove(path)
        raise
    return path


def checksum(path: str, table: str = TABLE) -> str:
    """Content hash over the ordered rows; storage layout plays no part."""
    digest = hashlib.sha256()
    conn = engine.connect(path, read_only=True)
    try:
        for row in conn.execute(f"SELECT * FROM {table} ORDER BY rowid"):
            digest.update(repr(row).encode())
    finally:
        conn.close()
    return digest.hexdigest()
