"""Domain types and the job state machine.

Records are immutable values; all shared mutable state lives in the
administrative database (see ``admindb``), so these types carry no locks.
Timestamps are integer milliseconds UTC throughout.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace
from enum import Enum

from .errors import IllegalTransition


def now_ms() -> int:
    """Current wall-clock time as integer UTC milliseconds."""
    return int(time.time() * 1000)


class JobState(str, Enum):
    READY = "Ready"
    STARTED = "Started"
    FINISHED = "Finished"
    FAILED = "Failed"
    CANCELED = "Canceled"


class JobEvent(str, Enum):
    START = "Start"
    COMPLETE = "Complete"
    FAIL = "Fail"
    CANCEL = "Cancel"


class JobKind(str, Enum):
    QUERY = "Query"
    EXPORT = "Export"
    IMPORT = "Import"


class QueueMode(str, Enum):
    SYNC = "Sync"
    ASYNC = "Async"


TERMINAL_STATES = frozenset({JobState.FINISHED, JobState.FAILED, JobState.CANCELED})

# The complete legal-transition table; everything absent is illegal.
LEGAL_TRANSITIONS: dict[tuple[JobState, JobEvent], JobState] = {
    (JobState.READY, JobEvent.START): JobState.STARTED,
    (JobState.READY, JobEvent.CANCEL): JobState.CANCELED,
    (JobState.STARTED, JobEvent.COMPLETE): JobState.FINISHED,
    (JobState.STARTED, JobEvent.FAIL): JobState.FAILED,
    (JobState.STARTED, JobEvent.CANCEL): JobState.CANCELED,
}


def next_state(state: JobState, event: JobEvent) -> JobState:
    """Resolve a transition or raise IllegalTransition."""
    try:
        return LEGAL_TRANSITIONS[(state, event)]
    except KeyError:
        raise IllegalTransition(f"{event.value} is not legal from {state.value}") from None


@dataclass(frozen=True, slots=True)
class JobRecord:
    """One row per submitted job; the single source of truth for its lifecycle."""

    job_id: int
    user_id: int
    queue_id: str
    target_id: int | None
    job_kind: JobKind
    query_text: str
    rewritten_text: str
    dest_mydb: str | None
    dest_table: str | None
    state: JobState
    t_submitted: int
    t_started: int | None = None
    t_finished: int | None = None
    rows_out: int = 0
    error_msg: str | None = None
    output_url: str | None = None
    cancel_requested: bool = False
    params: dict = field(default_factory=dict)
    route: str | None = None
    context: str | None = None

    def check_invariants(self) -> None:
        if self.t_started is not None and self.t_started < self.t_submitted:
            raise ValueError("t_started precedes t_submitted")
        if self.t_finished is not None:
            base = self.t_started if self.t_started is not None else self.t_submitted
            if self.t_finished < base:
                raise ValueError("t_finished precedes earlier timestamps")
        if self.state is JobState.FINISHED and self.error_msg:
            raise ValueError("Finished job carries an error message")
        if self.state is JobState.FAILED and not self.error_msg:
            raise ValueError("Failed job lacks an error message")
        if (
            self.job_kind is JobKind.EXPORT
            and self.state is JobState.FINISHED
            and not self.output_url
        ):
            raise ValueError("Finished export lacks an output url")
        if self.rows_out < 0:
            raise ValueError("rows_out negative")


def transition(job: JobRecord, event: JobEvent, now: int, *,
               error_msg: str | None = None,
               rows_out: int | None = None,
               output_url: str | None = None) -> JobRecord:
    """Pure state-machine step: new record with the event applied.

    Persistence-level atomicity (compare-and-set on the prior state) is the
    admin database's job; this function only encodes legality and which
    timestamp each event stamps. ``now`` is clamped so timestamp
    monotonicity survives coarse clocks.
    """
    new = next_state(job.state, event)
    updates: dict = {"state": new}
    now = max(now, job.t_submitted, job.t_started or 0)
    if event is JobEvent.START:
        updates["t_started"] = now
    else:
        updates["t_finished"] = now
    if new is JobState.FAILED:
        if not error_msg:
            raise ValueError("Fail event requires an error message")
        updates["error_msg"] = error_msg
    if new is JobState.FINISHED:
        updates["error_msg"] = None
    if rows_out is not None:
        if rows_out < job.rows_out:
            raise ValueError("rows_out may not decrease")
        updates["rows_out"] = rows_out
    if output_url is not None:
        updates["output_url"] = output_url
    updated = replace(job, **updates)
    updated.check_invariants()
    return updated


@dataclass(frozen=True, slots=True)
class QueueSpec:
    """Queue quantum and mode; exactly one queue runs in Sync mode."""

    queue_id: str
    quantum_s: float
    mode: QueueMode
    max_rows: int | None = None

    def validate(self) -> None:
        if self.quantum_s <= 0:
            raise ValueError("quantum_s must be positive")
        if self.mode is QueueMode.SYNC and self.max_rows is not None and self.max_rows <= 0:
            raise ValueError("max_rows must be positive when set")


@dataclass(frozen=True, slots=True)
class ServerTarget:
    """An execution target: a locator plus the catalog contexts it serves."""

    target_id: int | None
    name: str
    locator: str
    context_names: tuple[str, ...]
    max_concurrent: int = 2
    mydb_host: bool = True

    def validate(self) -> None:
        if self.max_concurrent < 1:
            raise ValueError("max_concurrent must be >= 1")
        lowered = [c.lower() for c in self.context_names]
        if len(set(lowered)) != len(lowered):
            raise ValueError("duplicate context names on one target")


@dataclass(frozen=True, slots=True)
class UserRecord:
    ws_id: int
    password_hash: str
    email: str | None = None
    notify: bool = False
    mydb_name: str | None = None
    mydb_target: int | None = None

    def validate(self) -> None:
        if (self.mydb_name is None) != (self.mydb_target is None):
            raise ValueError("mydb_name and mydb_target must be set together")


@dataclass(frozen=True, slots=True)
class GroupRecord:
    group_id: int
    name: str
    owner_ws: int
    member_ws_ids: tuple[int, ...] = ()


@dataclass(frozen=True, slots=True)
class PublishedTable:
    group_id: int
    publisher_ws: int
    alias: str
    mydb_name: str
    table_name: str
    published_at: int


@dataclass(frozen=True, slots=True)
class ScreenRule:
    rule_id: int
    pattern: str
    message: str
