"""CSV output with ``#`` header comments.

Numbers are written with ``repr`` so output does not depend on locale and
round-trips exactly.  The header block holds ``# key = value`` lines; the
optional trailer holds ``# result key = value`` lines.
"""

from __future__ import annotations

import csv
import io
import math

__all__ = ["format_value", "render_csv", "read_header"]


def format_value(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return str(int(v))
    if isinstance(v, int):
        return str(v)
    if isinstance(v, float):
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return repr(v)
    if hasattr(v, "item"):              # numpy scalars
        return format_value(v.item())
    return str(v)


def render_csv(header: list, columns, rows, results: list = ()) -> str:
    """Whole file as a string; ``header`` and ``results`` are ``(key, text)`` pairs."""
    buf = io.StringIO()
    for key, text in header:
        buf.write(f"# {key} = {text}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([format_value(v) for v in row])
    for key, value in results:
        buf.write(f"# result {key} = {format_value(value)}\n")
    return buf.getvalue()


def read_header(text: str) -> str:
    """Config text rebuilt from the leading comment block of a CSV file."""
    lines = []
    for line in text.splitlines():
        if not line.startswith("#"):
            break
        lines.append(line[1:].strip())
    return "\n".join(lines) + "\n"
