import csv
import io
import json

import pytest

from stbcmud.analysis import CurvePoint, SimResult
from stbcmud.harness.engine import RunRecord
from stbcmud.harness.export import CSV_COLUMNS, ExportError, export, load_record, to_csv, to_json


@pytest.fixture
def record():
    pts = [CurvePoint(0.0, 1000, 123), CurvePoint(5.5, 3_000_007, 101, True)]
    return RunRecord({"seed": 4}, SimResult(pts, "ap J=2", 4), 1.25)


class TestCsv:
    def test_header_only(self):
        rec = RunRecord({}, SimResult([], "empty"), 0.0)
        assert to_csv(rec) == "x,y,trials,errors,label,seed\n"

    def test_rows_reparse(self, record):
        text = to_csv(record)
        assert "\r" not in text
        rows = list(csv.DictReader(io.StringIO(text)))
        assert tuple(rows[0]) == CSV_COLUMNS
        for row in rows:
            assert float(row["y"]) == int(row["errors"]) / int(row["trials"])
        assert rows[1]["x"] == "5.5" and rows[1]["seed"] == "4"

    def test_file(self, record, tmp_path):
        export(record, tmp_path / "r.csv", "csv")
        assert (tmp_path / "r.csv").read_bytes().count(b"\n") == 3


class TestJson:
    def test_round_trip(self, record, tmp_path):
        export(record, tmp_path / "r.json")
        assert load_record(tmp_path / "r.json") == record

    def test_field_names(self, record):
        d = json.loads(to_json(record))
        assert set(d) >= {"config", "result", "wall_time", "version"}
        assert d["result"]["points"][1]["low_confidence"] is True


class TestErrors:
    def test_unwritable(self, record, tmp_path):
        bad = tmp_path / "missing" / "r.json"
        with pytest.raises(ExportError, match=str(bad)):
            export(record, bad)

    def test_format(self, record, tmp_path):
        with pytest.raises(ValueError):
            export(record, tmp_path / "r", "xml")
