from __future__ import annotations

import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from stochtransport.errors import DomainError
from stochtransport.fields import GridSpec, ScalarField, VectorField
from stochtransport.io import (config_hash, field_rows, format_value, read_csv, read_pgm,
                               write_csv, write_field_csv, write_manifest, write_pgm)


@given(st.floats(allow_nan=False, allow_infinity=False))
def test_floats_round_trip(x):
    assert float(format_value(x)) == x


@pytest.mark.parametrize("value,text", [(True, "true"), (np.bool_(False), "false"), (3, "3"),
                                        (np.int64(-2), "-2"), (0.1, "0.10000000000000001"),
                                        ("cellular", "cellular")])
def test_format(value, text):
    assert format_value(value) == text


def test_csv_uses_lf_and_round_trips(tmp_path):
    p = write_csv(tmp_path / "sub" / "t.csv", ["a", "b"], [[1, 0.5], [2, 1 / 3]])
    raw = p.read_bytes()
    assert b"\r" not in raw
    assert raw.startswith(b"a,b\n1,0.5\n")
    header, rows = read_csv(p)
    assert header == ["a", "b"] and float(rows[1][1]) == 1 / 3


def test_field_rows(tmp_path):
    g = GridSpec(2, 1.0, 4)
    f = VectorField(g, np.stack([np.ones(g.shape), 2 * np.ones(g.shape)]))
    header, rows = field_rows(f)
    assert header == ["i", "j", "x0", "x1", "value0", "value1"]
    assert len(rows) == 16 and rows[0][:4] == [0, 0, -1.0, -1.0]
    header, _ = field_rows(ScalarField.constant(g, 1.0))
    assert header[-1] == "value"
    assert write_field_csv(f, tmp_path / "f.csv").exists()


class TestPGM:
    def test_header_and_scale(self, tmp_path):
        a = np.array([[0.0, 1.0], [2.0, 4.0]])
        p = write_pgm(a, tmp_path / "a.pgm")
        raw = p.read_bytes()
        assert raw.startswith(b"P5\n# scale min=0 max=4\n2 2\n255\n")
        img, lo, hi = read_pgm(p)
        assert (lo, hi) == (0.0, 4.0)
        assert img.dtype == np.uint8 and img.max() == 255 and img.min() == 0

    def test_orientation(self, tmp_path):
        # values increase with the second index, which is drawn upwards
        g = GridSpec(2, 1.0, 8)
        f = ScalarField(g, g.mesh()[1] + 0.0 * g.mesh()[0])
        img, _, _ = read_pgm(write_pgm(f, tmp_path / "y.pgm"))
        assert img[0, 0] == 255 and img[-1, 0] == 0
        assert np.all(img == img[:, :1])

    def test_constant_field(self, tmp_path):
        img, lo, hi = read_pgm(write_pgm(np.full((3, 5), 2.0), tmp_path / "c.pgm"))
        assert img.shape == (5, 3) and np.all(img == 0) and lo == hi == 2.0

    def test_needs_two_dimensions(self, tmp_path):
        with pytest.raises(DomainError):
            write_pgm(np.zeros(4), tmp_path / "x.pgm")


def test_manifest(tmp_path):
    recs = [{"b": 1, "a": [1, 2]}, {"status": "PASS"}]
    p = write_manifest(tmp_path, recs)
    lines = p.read_text().splitlines()
    assert [json.loads(line) for line in lines] == recs
    assert lines[0] == '{"a": [1, 2], "b": 1}'


def test_config_hash_is_order_independent():
    assert config_hash({"a": 1, "b": 2}) == config_hash({"b": 2, "a": 1})
    assert config_hash({"a": 1}) != config_hash({"a": 2})
    assert len(config_hash({})) == 16
