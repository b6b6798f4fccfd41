"""CSV/JSON emitters shared by the CLI.

Floats are written with 17 significant digits so tables round-trip
bit-for-bit.
"""

from __future__ import annotations

import csv
import io
import json
import math
from typing import Iterable, Sequence


def format_cell(x) -> str:
    if x is None:
        return ""
    if isinstance(x, bool):
        return "true" if x else "false"
    if isinstance(x, float):
        return format(x, ".17g")
    return str(x)


def parse_cell(text: str):
    if text == "":
        return None
    if text in ("true", "false"):
        return text == "true"
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        return text


def write_csv(header: Sequence[str], rows: Iterable[Sequence], fh) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([format_cell(x) for x in row])


def csv_text(header: Sequence[str], rows: Iterable[Sequence]) -> str:
    buf = io.StringIO()
    write_csv(header, rows, buf)
    return buf.getvalue()


def read_csv(fh) -> tuple[list[str], list[list]]:
    r = csv.reader(fh)
    header = next(r)
    return header, [[parse_cell(c) for c in row] for row in r]


def _json_safe(obj):
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    if isinstance(obj, dict):
        return {str(k): _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    return obj


def json_text(obj) -> str:
    return json.dumps(_json_safe(obj), indent=2, allow_nan=False) + "\n"
