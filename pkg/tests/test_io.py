import json
import math
from dataclasses import dataclass

import numpy as np

from dichotomy.io import dumps, fmt_float, read_matrix, sha256_file, to_plain, write_csv, write_matrix


def test_floats_round_trip_exactly():
    rng = np.random.default_rng(0)
    for x in rng.normal(size=200) * 10.0 ** rng.integers(-20, 20, 200):
        assert float(fmt_float(x)) == x
    assert fmt_float(float("nan")) == "NaN" and fmt_float(-math.inf) == "-Infinity"


def test_dumps_handles_numpy_and_dataclasses():
    @dataclass
    class P:
        a: float
        b: np.ndarray

    out = json.loads(dumps({"p": P(0.1, np.array([1.0, 2.0])), "flag": np.bool_(True), "n": np.int64(3)}))
    assert out == {"p": {"a": 0.1, "b": [1.0, 2.0]}, "flag": True, "n": 3}
    assert to_plain((1, 2)) == [1, 2]


def test_matrix_io_csv_and_json(tmp_path):
    a = np.array([[1.0, 1 / 3], [-2e-17, 5.0]])
    for name in ("m.csv", "m.json"):
        p = write_matrix(tmp_path / name, a)
        np.testing.assert_array_equal(read_matrix(p), a)


def test_csv_and_hash(tmp_path):
    p = write_csv(tmp_path / "x.csv", ["a", "b"], [[0.1, 1], [np.float64(0.2), 2]])
    assert p.read_text() == "a,b\n0.10000000000000001,1\n0.20000000000000001,2\n"
    assert len(sha256_file(p)) == 64
