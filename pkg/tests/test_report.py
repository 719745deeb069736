import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from qplab.report import ExperimentReport, dumps, fmt_float, to_jsonable, write_csv, write_json


@given(st.floats(allow_nan=False, allow_infinity=False))
def test_float_round_trip(x):
    assert float(fmt_float(x)) == x
    assert float(json.loads(dumps({"x": x}))["x"]) == x


def test_seventeen_digits():
    assert fmt_float(0.1) == "0.10000000000000001"
    assert fmt_float(1.0) == "1"


def test_non_finite_tokens():
    assert fmt_float(math.nan) == "NaN"
    text = dumps([math.inf, -math.inf])
    assert json.loads(text) == [math.inf, -math.inf]


def test_jsonable_conversions():
    out = to_jsonable({"a": np.arange(3), "b": np.float64(0.5), "c": 1 + 2j, "d": (np.bool_(True),)})
    assert out == {"a": [0, 1, 2], "b": 0.5, "c": {"re": 1.0, "im": 2.0}, "d": [True]}


def test_strings_with_marker_like_content_survive():
    data = {"s": "plain text", "n": [1.5, "2.5"]}
    assert json.loads(dumps(data)) == data


def test_rewrite_is_byte_identical(tmp_path):
    data = {"x": 1 / 3, "y": [np.float32(0.1), 2e-300]}
    p = write_json(tmp_path / "a.json", data)
    q = write_json(tmp_path / "b.json", json.loads(p.read_text()))
    assert p.read_bytes() == q.read_bytes()


def test_csv_cells(tmp_path):
    p = write_csv(tmp_path / "t.csv", ["a", "b", "c", "d"], [(True, 0.25, 1 - 2j, [1.0, 2.0])])
    assert p.read_text().splitlines() == ["a,b,c,d", "true,0.25,1-2j,1 2"]


def test_experiment_report_fields():
    d = ExperimentReport("green", {"seed": 1}, {"norm": 2.0}).as_dict()
    assert list(d) == ["kind", "version", "status", "config", "summary", "checks"]
    assert d["status"] == "ok"
