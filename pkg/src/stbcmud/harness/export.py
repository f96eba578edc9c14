"""Writing run records as CSV or JSON."""

from __future__ import annotations

import csv
import io
import json

from .engine import RunRecord

CSV_COLUMNS = ("x", "y", "trials", "errors", "label", "seed")

__all__ = ["CSV_COLUMNS", "ExportError", "to_csv", "to_json", "export", "load_record"]


class ExportError(OSError):
    pass


def to_csv(record: RunRecord) -> str:
    """One row per curve point; header only when the curve is empty."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    res = record.result
    seed = "" if res.seed is None else res.seed
    for p in res.points:
        w.writerow([repr(float(p.x)), repr(p.y), p.trials, p.errors, res.label, seed])
    return buf.getvalue()


def to_json(record: RunRecord) -> str:
    return json.dumps(record.to_dict(), indent=2, sort_keys=True) + "\n"


def export(record: RunRecord, path, fmt: str = "json") -> None:
    if fmt not in ("csv", "json"):
        raise ValueError(f"unknown format {fmt!r}; use csv or json")
    text = to_csv(record) if fmt == "csv" else to_json(record)
    try:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    except OSError as exc:
        raise ExportError(f"cannot write {path}: {exc.strerror}") from None


def load_record(path) -> RunRecord:
    try:
        with open(path, encoding="utf-8") as fh:
            return RunRecord.from_dict(json.load(fh))
    except OSError as exc:
        raise ExportError(f"cannot read {path}: {exc.strerror}") from None
