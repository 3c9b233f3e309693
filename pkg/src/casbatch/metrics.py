"""Workload analysis over the per-job stat log.

The stat log is append-only (one row per completed job); everything here
is a pure function over those rows, so the ops dashboard and the stats
CLI can recompute views at any time without touching the scheduler.
"""

from __future__ import annotations

import math
import statistics
from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Sequence

from .errors import DegenerateBins, EmptyInput

DEFAULT_BINS_PER_DECADE = 5

# Values sitting on a bin edge land there exactly in real arithmetic but
# just below it in floats (log10(1000) comes out under 3.0); the nudge is one
# part in 1e9 of a decade, far below any workload measurement's precision.
_EDGE_NUDGE = 1e-9


@dataclass(frozen=True, slots=True)
class QueryStat:
    """One completed job's cost line: wall seconds, rows moved, CPU spent.

    cpu_s is a worker-thread CPU time delta around execution, a proxy for
    what the engine itself will not report per query. Shared-scan riders
    book zero: their CPU belongs to the wheel, not any one rider.
    """

    job_id: int
    elapsed_s: float
    rows: int
    cpu_s: float
    t_finished: int

    def validate(self, worker_count: int = 1) -> None:
        if self.elapsed_s < 0 or self.rows < 0 or self.cpu_s < 0:
            raise ValueError("stat fields must be nonnegative")
        if self.cpu_s > self.elapsed_s * worker_count + 1e-9:
            raise ValueError(
                f"cpu_s {self.cpu_s} exceeds {worker_count} worker(s) "
                f"over {self.elapsed_s}s of wall time"
            )


def stats_from_rows(rows: Iterable[tuple]) -> list[QueryStat]:
    """Adapt (job_id, elapsed_s, rows, cpu_s, t_finished) admin-db rows."""
    return [QueryStat(*row) for row in rows]


def log_histogram(values: Sequence[float],
                  bins_per_decade: int = DEFAULT_BINS_PER_DECADE,
                  ) -> list[tuple[float, int]]:
    """Geometric-bin frequency histogram: (bin center, count) pairs.

    Bin k covers [10^(k/b), 10^((k+1)/b)); its center is the geometric
    midpoint 10^((k+0.5)/b). Only occupied bins are returned, in
    ascending order, and the counts always sum to len(values).
    """
    if bins_per_decade < 1:
        raise ValueError("bins_per_decade must be >= 1")
    if not values:
        raise EmptyInput("nothing to bin")
    counts: Counter[int] = Counter()
    for v in values:
        if v <= 0:
            raise ValueError(f"log bins need positive values, got {v!r}")
        counts[math.floor(bins_per_decade * math.log10(v) + _EDGE_NUDGE)] += 1
    return [(10.0 ** ((k + 0.5) / bins_per_decade), counts[k])
            for k in sorted(counts)]


def powerlaw_slope(hist: Sequence[tuple[float, int]]) -> float:
    """Least-squares slope of log10(count) against log10(center).

    Empty bins carry no information on a log-log plot and are skipped. A
    flat workload fits slope 0; the classic heavy-tailed query mix, where
    size times frequency stays roughly constant, fits slope -1.
    """
    points = [(math.log10(center), math.log10(count))
              for center, count in hist if count > 0]
    if len(points) < 3:
        raise DegenerateBins("need at least 3 occupied bins to fit")
    xs, ys = zip(*points)
    try:
        return statistics.linear_regression(xs, ys).slope
    except statistics.StatisticsError as exc:
        raise DegenerateBins(str(exc)) from None


def utilization(stats: Iterable[QueryStat],
                span_ms: tuple[int, int]) -> float:
    """CPU seconds booked in the window over the window's wall seconds.

    Jobs are attributed to the window their completion falls in, the way
    they enter the stat log. With several workers the ratio may exceed 1,
    up to the worker count.
    """
    lo, hi = span_ms
    if hi <= lo:
        raise ValueError("window must have positive duration")
    busy = sum(s.cpu_s for s in stats if lo <= s.t_finished < hi)
    return busy / ((hi - lo) / 1000.0)
