"""Table serialization round trips: CSV, VOTable, JSON."""

import io
import json

import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from casbatch import formats
from casbatch.errors import ParseError


def parse_all(text, fmt="csv"):
    columns, rows = formats.PARSERS[fmt](io.StringIO(text))
    return columns, list(rows)


def render(columns, rows, fmt="csv"):
    buf = io.StringIO()
    formats.WRITERS[fmt](buf, columns, iter(rows))
    return buf.getvalue()


# ---------------------------------------------------------------- CSV parse

def test_csv_sniffs_types_from_sample():
    columns, rows = parse_all("id,ra,dec\n1,10.0,-5.0\n2,11.5,3.25\n3,12,0\n")
    assert columns == [("id", "integer"), ("ra", "float"), ("dec", "float")]
    assert rows == [(1, 10.0, -5.0), (2, 11.5, 3.25), (3, 12.0, 0.0)]


def test_csv_mixed_int_then_text_widens_to_text():
    columns, rows = parse_all("a\n1\n2\nhello\n")
    assert columns == [("a", "text")]
    assert rows == [("1",), ("2",), ("hello",)]


def test_csv_empty_cell_is_null_in_numeric_column():
    columns, rows = parse_all("a,b\n1,x\n,y\n")
    assert columns == [("a", "integer"), ("b", "text")]
    assert rows == [(1, "x"), (None, "y")]


def test_csv_all_empty_column_is_text():
    columns, rows = parse_all("a,b\n1,\n2,\n")
    assert columns == [("a", "integer"), ("b", "text")]
    assert rows == [(1, ""), (2, "")]


def test_csv_empty_input_rejected():
    with pytest.raises(ParseError):
        parse_all("")
    with pytest.raises(ParseError):
        parse_all("\n")


def test_csv_arity_mismatch_names_line():
    with pytest.raises(ParseError) as exc:
        parse_all("a,b\n1,2\n3\n")
    assert "line 3" in str(exc.value)


def test_csv_type_error_past_sniff_window_names_line():
    # Rows 1..SNIFF_ROWS are clean integers, so the column locks to
    # integer before the bad value arrives.
    n = formats.SNIFF_ROWS
    lines = ["a"] + [str(i) for i in range(n)] + ["oops"]
    with pytest.raises(ParseError) as exc:
        parse_all("\n".join(lines) + "\n")
    msg = str(exc.value)
    assert f"line {n + 2}" in msg and "'a'" in msg


def test_csv_quoted_fields_with_commas_and_newlines():
    columns, rows = parse_all('s\n"a,b"\n"line1\nline2"\n"say ""hi"""\n')
    assert columns == [("s", "text")]
    assert rows == [("a,b",), ("line1\nline2",), ('say "hi"',)]


# ---------------------------------------------------------------- CSV write

def test_csv_write_and_count():
    buf = io.StringIO()
    n = formats.write_csv(buf, [("a", "integer"), ("s", "text")],
                          iter([(1, "x"), (2, "y")]))
    assert n == 2
    assert buf.getvalue() == "a,s\n1,x\n2,y\n"


def test_csv_write_empty_table_is_header_only():
    buf = io.StringIO()
    n = formats.write_csv(buf, [("a", "integer")], iter([]))
    assert n == 0
    assert buf.getvalue() == "a\n"


def test_csv_float_repr_survives_round_trip():
    values = [0.1, 1.5e-8, 1e300, -0.0, 12345.6789, 2.0 ** -40]
    text = render([("v", "float")], [(v,) for v in values])
    _, rows = parse_all(text)
    assert [r[0] for r in rows] == values


def test_csv_none_round_trip_numeric():
    text = render([("v", "float")], [(1.0,), (None,), (2.0,)])
    _, rows = parse_all(text)
    assert [r[0] for r in rows] == [1.0, None, 2.0]


# ----------------------------------------------------------------- VOTable

def test_votable_round_trip():
    columns = [("id", "integer"), ("ra", "float"), ("name", "text")]
    rows = [(1, 10.5, "a"), (2, -3.25, "b & <c>")]
    text = render(columns, rows, fmt="votable")
    out_columns, out_rows = parse_all(text, fmt="votable")
    assert out_columns == columns
    assert out_rows == rows


def test_votable_field_datatypes():
    text = render([("i", "integer"), ("f", "float"), ("s", "text")],
                  [(1, 2.0, "x")], fmt="votable")
    assert 'datatype="long"' in text
    assert 'datatype="double"' in text
    assert 'datatype="char" arraysize="*"' in text


def test_votable_parse_maps_narrow_datatypes():
    text = """<?xml version="1.0"?>
<VOTABLE xmlns="http://www.ivoa.net/xml/VOTable/v1.3" version="1.3">
 <RESOURCE><TABLE>
  <FIELD name="a" datatype="short"/>
  <FIELD name="b" datatype="float"/>
  <FIELD name="c" datatype="boolean"/>
  <DATA><TABLEDATA>
   <TR><TD>7</TD><TD>1.5</TD><TD>true</TD></TR>
  </TABLEDATA></DATA>
 </TABLE></RESOURCE>
</VOTABLE>"""
    columns, rows = parse_all(text, fmt="votable")
    assert columns == [("a", "integer"), ("b", "float"), ("c", "text")]
    assert rows == [(7, 1.5, "true")]


def test_votable_empty_table_round_trip():
    text = render([("a", "integer")], [], fmt="votable")
    columns, rows = parse_all(text, fmt="votable")
    assert columns == [("a", "integer")]
    assert rows == []


def test_votable_td_arity_mismatch_rejected():
    text = render([("a", "integer"), ("b", "integer")], [(1, 2)],
                  fmt="votable")
    broken = text.replace("<TD>2</TD>", "")
    with pytest.raises(ParseError):
        parse_all(broken, fmt="votable")


def test_votable_not_xml_rejected():
    with pytest.raises(ParseError):
        parse_all("this is not xml", fmt="votable")


def test_votable_without_fields_rejected():
    with pytest.raises(ParseError):
        parse_all("<VOTABLE><RESOURCE><TABLE/></RESOURCE></VOTABLE>",
                  fmt="votable")


# -------------------------------------------------------------------- JSON

def test_json_shape():
    text = render([("a", "integer"), ("s", "text")], [(1, "x"), (None, "y")],
                  fmt="json")
    doc = json.loads(text)
    assert doc == {"columns": [{"name": "a", "type": "integer"},
                               {"name": "s", "type": "text"}],
                   "rows": [[1, "x"], [None, "y"]]}


def test_json_empty_rows():
    doc = json.loads(render([("a", "float")], [], fmt="json"))
    assert doc["rows"] == []


def test_extensions_map():
    assert formats.EXTENSIONS == {"csv": "csv", "votable": "xml",
                                  "json": "json"}


# -------------------------------------------------------- round-trip property

# Leading letter keeps text cells from re-sniffing as numbers.
_csv_text_cell = st.text(
    alphabet=st.characters(blacklist_categories=("Cs",),
                           blacklist_characters="\x00\r"),
    max_size=20,
).map(lambda s: "x" + s)

# XML 1.0 cannot carry C0 control characters.
_xml_text_cell = st.text(
    alphabet=st.characters(blacklist_categories=("Cs", "Cc")),
    max_size=20,
)

_columns = st.lists(
    st.sampled_from(["integer", "float", "text"]), min_size=1, max_size=4
)


def _cell_for(kind, text_cell):
    if kind == "integer":
        return st.one_of(st.none(), st.integers(-10**12, 10**12))
    if kind == "float":
        return st.one_of(
            st.none(),
            st.floats(allow_nan=False, allow_infinity=False, width=64),
        )
    return text_cell


@settings(max_examples=60, deadline=None)
@given(data=st.data())
def test_csv_round_trip_property(data):
    kinds = data.draw(_columns)
    columns = [(f"c{i}", k) for i, k in enumerate(kinds)]
    row_strategy = st.tuples(*[_cell_for(k, _csv_text_cell) for k in kinds])
    rows = data.draw(st.lists(row_strategy, max_size=20))
    # A numeric column that is entirely NULL degrades to text on re-parse
    # (covered by a unit test); keep the property on the exact cases.
    for i, kind in enumerate(kinds):
        if kind != "text" and rows:
            assume(any(r[i] is not None for r in rows))

    text = render(columns, rows)
    out_columns, out_rows = parse_all(text)

    assert [name for name, _ in out_columns] == [n for n, _ in columns]
    if rows:
        assert out_columns == columns
    assert out_rows == rows


@settings(max_examples=30, deadline=None)
@given(data=st.data())
def test_votable_round_trip_property(data):
    kinds = data.draw(_columns)
    columns = [(f"c{i}", k) for i, k in enumerate(kinds)]
    row_strategy = st.tuples(*[_cell_for(k, _xml_text_cell) for k in kinds])
    rows = data.draw(st.lists(row_strategy, max_size=10))

    text = render(columns, rows, fmt="votable")
    out_columns, out_rows = parse_all(text, fmt="votable")

    assert out_columns == columns
    assert out_rows == rows
