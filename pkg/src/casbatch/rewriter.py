"""Query screening and textual rewriting.

Three passes take a submitted query to an executable one: regex screening
over a literal-blinded rendition, extraction of the ``INTO MyDB.x``
destination, and token-aware substitution of the ``MyDB.`` and ``GROUP.``
aliases into physical database names. All passes are pure functions; the
service layer supplies the user's memberships and the published-table set.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import NamedTuple

from . import sqltext
from .errors import (
    MalformedInto,
    MissingInto,
    MyDbNotProvisioned,
    NotPublished,
    ScreenRejected,
    UnknownGroup,
)
from .model import GroupRecord, PublishedTable, ScreenRule, UserRecord
from .sqltext import ident_value, quote_ident


@dataclass(frozen=True, slots=True)
class RewriteResult:
    clean_sql: str
    dest_table: tuple[str, str] | None      # (physical scratch db, table)
    referenced_contexts: tuple[str, ...]
    screened: bool = True


class Rejection(NamedTuple):
    rule_id: int
    message: str


def _screen_text(sql: str) -> str:
    """Rendition for rule matching: literal bodies blanked, structure kept.

    String contents can't trip rules; comment markers stay visible so a
    rule can still flag a suspicious `; --` tail, but comment prose can't
    trip word rules either.
    """
    parts: list[str] = []
    for tok in sqltext.tokenize(sql):
        if tok.kind == "string":
            parts.append("''")
        elif tok.kind == "comment":
            if tok.text.startswith("/*"):
                parts.append("/**/")
            elif tok.text.startswith("--"):
                parts.append("--")
            else:
                parts.append("#")
        else:
            parts.append(tok.text)
    return "".join(parts)


def screen(query: str, rules: list[ScreenRule]) -> Rejection | None:
    """First matching rule in rule_id order rejects; None means pass."""
    text = _screen_text(query)
    for rule in sorted(rules, key=lambda r: r.rule_id):
        if re.search(rule.pattern, text, re.IGNORECASE | re.DOTALL):
            return Rejection(rule.rule_id, rule.message)
    return None


def extract_into(query: str) -> tuple[str, str | None]:
    """Remove a `INTO MyDB.<table>` clause, returning (clean_sql, table).

    Text outside the removed clause is preserved byte-for-byte. INSERT INTO
    is not an extraction target. A destination outside MyDB is rejected:
    results may only land in the user's scratch database.
    """
    tokens = sqltext.tokenize(query)
    sig = list(sqltext.significant(tokens))
    hits: list[int] = []
    for k, (_, tok) in enumerate(sig):
        if tok.kind == "ident" and tok.text.lower() == "into":
            if k > 0 and sig[k - 1][1].kind == "ident" \
                    and sig[k - 1][1].text.lower() in ("insert", "replace"):
                continue
            hits.append(k)
    if not hits:
        return query, None
    if len(hits) > 1:
        raise MalformedInto("more than one INTO clause")

    k = hits[0]
    try:
        first = sig[k + 1][1]
    except IndexError:
        raise MalformedInto("INTO lacks a destination") from None
    qualifier = ident_value(first)
    if qualifier is None:
        raise MalformedInto("INTO destination is not an identifier")
    if not (k + 2 < len(sig) and sig[k + 2][1].text == "."):
        raise MalformedInto(
            f"INTO {qualifier} is not allowed: results must go to MyDB.<table>"
        )
    if qualifier.lower() != "mydb":
        raise MalformedInto(
            f"INTO {qualifier}.<table> is not allowed: results must go to MyDB"
        )
    table = ident_value(sig[k + 3][1]) if k + 3 < len(sig) else None
    if table is None:
        raise MalformedInto("INTO MyDB. lacks a table name")
    if k + 4 < len(sig) and sig[k + 4][1].text == ".":
        raise MalformedInto("INTO destination has too many parts")

    start = sig[k][0]
    if start > 0 and tokens[start - 1].kind == "ws":
        start -= 1
    removed = range(start, sig[k + 3][0] + 1)
    clean = "".join(t.text for i, t in enumerate(tokens) if i not in removed)
    return clean, table


def requires_into(sql: str) -> bool:
    """True when the statement returns rows rather than writing them.

    A bare SELECT (optionally behind WITH) has nowhere to put its result in
    an asynchronous run; statements that write (INSERT, UPDATE, DELETE,
    CREATE, DROP) carry their own destination.
    """
    first = None
    writes = False
    for _, tok in sqltext.significant(sqltext.tokenize(sql)):
        word = tok.text.lower() if tok.kind == "ident" else None
        if first is None:
            first = word
            if first not in ("select", "with"):
                return False
        if word in ("insert", "update", "delete", "create", "drop", "alter"):
            writes = True
    return first in ("select", "with") and not writes


def contexts_in(sql: str, known_contexts: tuple[str, ...]) -> tuple[str, ...]:
    """Catalog contexts referenced as `<context>.<table>`, first-use order."""
    ctx_by_lower = {c.lower(): c for c in known_contexts}
    seen: list[str] = []
    sig = list(sqltext.significant(sqltext.tokenize(sql)))
    for k, (_, tok) in enumerate(sig):
        val = ident_value(tok)
        if val is None or val.lower() not in ctx_by_lower:
            continue
        prev_is_dot = k > 0 and sig[k - 1][1].text == "."
        next_is_dot = k + 1 < len(sig) and sig[k + 1][1].text == "."
        if next_is_dot and not prev_is_dot:
            canonical = ctx_by_lower[val.lower()]
            if canonical not in seen:
                seen.append(canonical)
    return tuple(seen)


def resolve_aliases(clean_sql: str, user: UserRecord,
                    memberships: list[GroupRecord],
                    published: list[PublishedTable], *,
                    known_contexts: tuple[str, ...] = (),
                    dest: str | None = None) -> RewriteResult:
    """Substitute MyDB./GROUP. prefixes with physical names, token-aware.

    GROUP references are permission-checked against the caller's
    memberships; an alias published to none of them is not substituted and
    the reference is rejected instead.
    """
    tokens = sqltext.tokenize(clean_sql)
    sig = list(sqltext.significant(tokens))
    replacement: dict[int, str] = {}
    contexts_seen: list[str] = []
    ctx_by_lower = {c.lower(): c for c in known_contexts}
    groups_by_name = {g.name.lower(): g for g in memberships}
    pubs = {(p.group_id, p.alias.lower()): p for p in published}

    k = 0
    while k < len(sig):
        i, tok = sig[k]
        val = ident_value(tok)
        if val is None:
            k += 1
            continue
        prev_is_dot = k > 0 and sig[k - 1][1].text == "."
        next_is_dot = k + 1 < len(sig) and sig[k + 1][1].text == "."
        if prev_is_dot or not next_is_dot:
            k += 1
            continue
        low = val.lower()
        if low == "mydb":
            if not user.mydb_name:
                raise MyDbNotProvisioned(
                    "query references MyDB but no scratch database is provisioned"
                )
            replacement[i] = user.mydb_name
            k += 2
        elif low == "group":
            gname = ident_value(sig[k + 2][1]) if k + 2 < len(sig) else None
            has_table = (
                gname is not None
                and k + 4 < len(sig)
                and sig[k + 3][1].text == "."
            )
            tname = ident_value(sig[k + 4][1]) if has_table else None
            if gname is None or tname is None:
                raise UnknownGroup("GROUP references take the form GROUP.<group>.<table>")
            grp = groups_by_name.get(gname.lower())
            if grp is None:
                raise UnknownGroup(f"not a member of any group named {gname!r}")
            pub = pubs.get((grp.group_id, tname.lower()))
            if pub is None:
                raise NotPublished(f"{tname!r} is not published to group {gname!r}")
            replacement[i] = quote_ident(pub.mydb_name)
            replacement[sig[k + 2][0]] = quote_ident(pub.table_name)
            replacement[sig[k + 3][0]] = ""
            replacement[sig[k + 4][0]] = ""
            k += 5
        else:
            if low in ctx_by_lower:
                canonical = ctx_by_lower[low]
                if canonical not in contexts_seen:
                    contexts_seen.append(canonical)
            k += 1

    resolved = "".join(replacement.get(i, t.text) for i, t in enumerate(tokens))
    dest_table = (user.mydb_name, dest) if dest is not None and user.mydb_name else None
    return RewriteResult(resolved, dest_table, tuple(contexts_seen))


def rewrite(query: str, *, user: UserRecord, rules: list[ScreenRule],
            memberships: list[GroupRecord], published: list[PublishedTable],
            known_contexts: tuple[str, ...] = (),
            require_dest: bool = False) -> RewriteResult:
    """Full pipeline: screen, extract INTO, resolve aliases.

    With require_dest (asynchronous runs), a row-returning statement must
    carry an INTO MyDB destination.
    """
    rej = screen(query, rules)
    if rej is not None:
        raise ScreenRejected(rej.rule_id, rej.message)
    clean, dest = extract_into(query)
    if dest is not None and not user.mydb_name:
        raise MyDbNotProvisioned(
            "INTO MyDB requires a provisioned scratch database"
        )
    if require_dest and dest is None and requires_into(clean):
        raise MissingInto("asynchronous queries must write results INTO MyDB.<table>")
    return resolve_aliases(
        clean, user, memberships, published,
        known_contexts=known_contexts, dest=dest,
    )
