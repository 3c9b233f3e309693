"""Table serialization: CSV and VOTable both ways, JSON out.

CSV is comma-separated, double-quote quoted, UTF-8, mandatory header row.
VOTable uses TABLEDATA serialization only. Numeric values round-trip
exactly: integers verbatim, floats via repr (shortest exact form). An
empty field reads back as NULL in numeric columns and as the empty string
in text columns; that degeneracy is inherent to both formats.
"""

from __future__ import annotations

import csv
import json
import xml.etree.ElementTree as ET
from typing import IO, Iterable, Iterator
from xml.sax.saxutils import escape

from .errors import ParseError

SNIFF_ROWS = 1000

VOTABLE_NS = "http://www.ivoa.net/xml/VOTable/v1.3"

_VOTABLE_TYPE_OUT = {"integer": "long", "float": "double", "text": "char", "timestamp": "char"}
_VOTABLE_TYPE_IN = {
    "short": "integer", "int": "integer", "long": "integer",
    "float": "float", "double": "float",
}

EXTENSIONS = {"csv": "csv", "votable": "xml", "json": "json"}


def _classify(value: str) -> str:
    try:
        int(value)
        return "integer"
    except ValueError:
        pass
    try:
        float(value)
        return "float"
    except ValueError:
        return "text"


def _widest(kinds: set[str]) -> str:
    if not kinds or "text" in kinds:
        return "text"
    if "float" in kinds:
        return "float"
    return "integer"


def _coerce(value: str, kind: str, line: int, column: str):
    if kind == "text":
        return value
    if value == "":
        return None
    try:
        return int(value) if kind == "integer" else float(value)
    except ValueError:
        raise ParseError(
            f"line {line}: column {column!r}: could not parse {value!r} as {kind}"
        ) from None


# -- CSV -----------------------------------------------------------------------

def parse_csv(stream: IO[str]) -> tuple[list[tuple[str, str]], Iterator[tuple]]:
    """Header + type-sniffed rows; types fixed after the sniff window."""
    reader = csv.reader(stream)
    try:
        header = next(reader)
    except StopIteration:
        raise ParseError("empty input: missing header row") from None
    if not header or all(not h.strip() for h in header):
        raise ParseError("line 1: header row is blank")
    names = [h.strip() for h in header]

    window: list[tuple[int, list[str]]] = []
    kinds: list[set[str]] = [set() for _ in names]
    for raw in reader:
        line = reader.line_num
        if len(raw) != len(names):
            raise ParseError(
                f"line {line}: expected {len(names)} fields, got {len(raw)}"
            )
        window.append((line, raw))
        for i, v in enumerate(raw):
            if v != "":
                kinds[i].add(_classify(v))
        if len(window) >= SNIFF_ROWS:
            break
    types = [_widest(k) for k in kinds]
    columns = list(zip(names, types))

    def rows() -> Iterator[tuple]:
        for line, raw in window:
            yield tuple(
                _coerce(v, t, line, n) for v, (n, t) in zip(raw, columns)
            )
        for raw in reader:
            line = reader.line_num
            if len(raw) != len(names):
                raise ParseError(
                    f"line {line}: expected {len(names)} fields, got {len(raw)}"
                )
            yield tuple(
                _coerce(v, t, line, n) for v, (n, t) in zip(raw, columns)
            )

    return columns, rows()


def _render(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_csv(stream: IO[str], columns: list[tuple[str, str]],
              rows: Iterable[tuple]) -> int:
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow([n for n, _ in columns])
    count = 0
    for row in rows:
        writer.writerow([_render(v) for v in row])
        count += 1
    return count


# -- VOTable ---------------------------------------------------------------------

def write_votable(stream: IO[str], columns: list[tuple[str, str]],
                  rows: Iterable[tuple]) -> int:
    w = stream.write
    w('<?xml version="1.0" encoding="UTF-8"?>\n')
    w(f'<VOTABLE version="1.3" xmlns="{VOTABLE_NS}">\n')
    w(" <RESOURCE>\n  <TABLE>\n")
    for name, ctype in columns:
        dt = _VOTABLE_TYPE_OUT[ctype]
        arraysize = ' arraysize="*"' if dt == "char" else ""
        w(f'   <FIELD name="{escape(name, {chr(34): "&quot;"})}" datatype="{dt}"{arraysize}/>\n')
    w("   <DATA>\n    <TABLEDATA>\n")
    count = 0
    for row in rows:
        cells = "".join(f"<TD>{escape(_render(v))}</TD>" for v in row)
        w(f"     <TR>{cells}</TR>\n")
        count += 1
    w("    </TABLEDATA>\n   </DATA>\n  </TABLE>\n </RESOURCE>\n</VOTABLE>\n")
    return count


def _local(tag: str) -> str:
    return tag.rsplit("}", 1)[-1]


def parse_votable(stream: IO) -> tuple[list[tuple[str, str]], Iterator[tuple]]:
    """FIELD-declared columns + TABLEDATA rows (namespace-agnostic)."""
    try:
        tree = ET.parse(stream)
    except ET.ParseError as exc:
        raise ParseError(f"not well-formed XML: {exc}") from exc
    root = tree.getroot()

    fields = [e for e in root.iter() if _local(e.tag) == "FIELD"]
    if not fields:
        raise ParseError("no FIELD declarations found")
    columns = []
    for i, f in enumerate(fields):
        name = f.get("name") or f"col{i + 1}"
        columns.append((name, _VOTABLE_TYPE_IN.get(f.get("datatype", ""), "text")))

    trs = [e for e in root.iter() if _local(e.tag) == "TR"]

    def rows() -> Iterator[tuple]:
        for r_i, tr in enumerate(trs, start=1):
            tds = [e for e in tr if _local(e.tag) == "TD"]
            if len(tds) != len(columns):
                raise ParseError(
                    f"row {r_i}: expected {len(columns)} cells, got {len(tds)}"
                )
            yield tuple(
                _coerce(td.text or "", t, r_i, n)
                for td, (n, t) in zip(tds, columns)
            )

    return columns, rows()


# -- JSON (export only) ------------------------------------------------------------

def write_json(stream: IO[str], columns: list[tuple[str, str]],
               rows: Iterable[tuple]) -> int:
    cols = [{"name": n, "type": t} for n, t in columns]
    stream.write('{"columns": ' + json.dumps(cols) + ', "rows": [')
    count = 0
    for row in rows:
        if count:
            stream.write(",")
        stream.write("\n " + json.dumps(list(row)))
        count += 1
    stream.write("\n]}\n" if count else "]}\n")
    return count


WRITERS = {"csv": write_csv, "votable": write_votable, "json": write_json}
PARSERS = {"csv": parse_csv, "votable": parse_votable}
