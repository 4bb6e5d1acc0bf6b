from __future__ import annotations

import json
import math
from fractions import Fraction

import numpy as np

from specmap.serialize import dumps, format_float, write_csv


def test_float_format_round_trips():
    for x in (0.1, 1 / 3, 2.0**-1074, 1e300, -2.5, math.pi):
        text = format_float(x)
        assert float(text) == x
        digits = text.lstrip("-").split("e")[0].replace(".", "").lstrip("0")
        assert len(digits) == 17


def test_special_values():
    assert format_float(-0.0) == format_float(0.0)
    assert format_float(math.nan) == "null"
    assert format_float(math.inf) == "null"


def test_dumps_is_valid_json():
    obj = {
        "a": [1.5, 2, None, True],
        "b": {"c": complex(1, -2), "d": np.float64(0.25), "e": Fraction(1, 3)},
        "f": [],
        "g": [{"h": np.int64(3)}],
        "i": np.array([1.0, 2.0]),
    }
    back = json.loads(dumps(obj))
    assert back["a"] == [1.5, 2, None, True]
    assert back["b"]["c"] == [1.0, -2.0]
    assert back["b"]["e"] == 1 / 3
    assert back["g"][0]["h"] == 3
    assert back["i"] == [1.0, 2.0]
    assert dumps(obj) == dumps(obj)


def test_write_csv(tmp_path):
    path = tmp_path / "x.csv"
    write_csv(path, ("x", "y"), [(1, 0.5), (2, np.float64(1.0))])
    lines = path.read_text().splitlines()
    assert lines[0] == "x,y"
    assert lines[1] == "1,0.50000000000000000"
