from casbatch import engine


def sky_catalog(path: str, table: str = "galaxy", n: int = 1000) -> None:
    """Deterministic catalog with (obj_id, ra, dec, r) for match tests."""
    conn = engine.connect(path)
    try:
        conn.execute(
            f"CREATE TABLE {table} "
            "(obj_id INTEGER PRIMARY KEY, ra REAL, dec REAL, r REAL)"
        )
        conn.execute(
            f"""
            INSERT INTO {table}
            WITH RECURSIVE c(i) AS (
                SELECT 1 UNION ALL SELECT i + 1 FROM c WHERE i < {n}
            )
            SELECT i, (i * 0.37) % 360.0, -60.0 + (i * 0.11) % 120.0,
                   14.0 + (i % 1200) / 100.0
            FROM c
            """
        )
        conn.commit()
    finally:
        conn.close()


def populate(path: str, table: str = "t", n: int = 1000) -> None:
    """Create a deterministic n-row table: x integer, r float, s text."""
    conn = engine.connect(path)
    try:
        conn.execute(
            f"CREATE TABLE {table} (x INTEGER, r REAL, s TEXT)"
        )
        conn.execute(
            f"""
            INSERT INTO {table}
            WITH RECURSIVE c(i) AS (
                SELECT 1 UNION ALL SELECT i + 1 FROM c WHERE i < {n}
            )
            SELECT i, 14.0 + (i * 37 % 1200) / 100.0, 'row' || i FROM c
            """
        )
        conn.commit()
    finally:
        conn.close()
