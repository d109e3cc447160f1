"""Tests for lightweight rendering helpers."""

import pytest

from cwbc.utils.render import format_cell, render_table


def test_render_table_formats_a_plain_text_grid() -> None:
    """Tables should be aligned using column widths and simple separators."""
    rendered = render_table(
        ("variant", "wins"),
        (
            ("base", 0),
            ("wc-long", 12),
        ),
    )

    assert rendered == "variant  wins\n-------  ----\nbase        0\nwc-long    12"


def test_render_table_without_rows_prints_headers() -> None:
    """An empty table still renders its header and separator."""
    assert render_table(("a", "bc"), ()) == "a  bc\n-  --"


def test_render_table_rejects_rows_with_wrong_column_count() -> None:
    """Every row must provide exactly one value per header."""
    with pytest.raises(
        ValueError,
        match="Number of headers must match number of columns in rows",
    ):
        render_table(("variant", "mean"), (("only-one-column",),))


def test_format_cell_handles_missing_and_boolean_values() -> None:
    """Missing values render as a dash and booleans as words."""
    assert format_cell(None) == "-"
    assert format_cell(True) == "yes"
    assert format_cell(0.000123456) == "0.0001235"
