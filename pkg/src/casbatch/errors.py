"""Exception hierarchy shared across the service."""

from __future__ import annotations


class CasBatchError(Exception):
    """Base class for all service errors."""


# --- job state machine -------------------------------------------------------

class IllegalTransition(CasBatchError):
    """Event is not legal from the job's current state."""


class StaleState(CasBatchError):
    """Compare-and-set transition lost a race to a concurrent writer."""


# --- registry ----------------------------------------------------------------

class UnknownUser(CasBatchError):
    pass


class UnknownJob(CasBatchError):
    pass


class UnknownQueue(CasBatchError):
    pass


class UnknownTarget(CasBatchError):
    pass


class UnknownContext(CasBatchError):
    pass


class DuplicateContext(CasBatchError):
    """Context name already claimed by a registered target."""


class UnreachableLocator(CasBatchError):
    """Target locator does not resolve to a usable database directory."""


class NotOwner(CasBatchError):
    """Caller does not own the referenced job or table."""


class AlreadyTerminal(CasBatchError):
    """Job is already Finished or Failed; cancel is meaningless."""


# --- rewriter ----------------------------------------------------------------

class ScreenRejected(CasBatchError):
    """Query matched a reject rule during screening."""

    def __init__(self, rule_id: int, message: str):
        super().__init__(message)
        self.rule_id = rule_id
        self.message = message


class MalformedInto(CasBatchError):
    """INTO clause targets something other than MyDB."""


class MissingInto(CasBatchError):
    """Async queues require results to be written INTO MyDB."""


class NotPublished(CasBatchError):
    """GROUP alias names a table that is not published to the group."""


class UnknownGroup(CasBatchError):
    pass


class NotMember(CasBatchError):
    """User is not a member of the referenced group."""


class MyDbNotProvisioned(CasBatchError):
    """Query references MyDB but the user has no scratch database yet."""


# --- execution ---------------------------------------------------------------

class EngineError(CasBatchError):
    """Engine-reported execution error, message passed through verbatim."""


class QuantumExceeded(CasBatchError):
    """Query ran past its queue's execution quantum."""


class Stopped(CasBatchError):
    """Execution was stopped cooperatively (cancel or timeout sweep)."""


class TableExists(CasBatchError):
    pass


class UnknownTable(CasBatchError):
    pass


# --- mydb --------------------------------------------------------------------

class NoMyDbTarget(CasBatchError):
    """No registered target is eligible to host scratch databases."""


class InvalidSubmission(CasBatchError):
    """Request is structurally valid but names an unusable queue/format/option."""


class QuotaExceeded(CasBatchError):
    pass


class ParseError(CasBatchError):
    """Import stream could not be parsed; message names the offending spot."""


class MissingCoordinates(CasBatchError):
    """Cross-match input table lacks the configured ra/dec columns."""


class RadiusOutOfRange(CasBatchError):
    pass


class DuplicateAlias(CasBatchError):
    """Alias already published to the group."""


# --- shared scan -------------------------------------------------------------

class Ineligible(CasBatchError):
    """Query cannot ride the shared scan (join, aggregate, other table)."""


class SinkError(CasBatchError):
    """Rider sink failed; only that rider is affected."""


# --- metrics -----------------------------------------------------------------

class EmptyInput(CasBatchError):
    pass


class DegenerateBins(CasBatchError):
    """Too few populated bins to fit a slope."""
