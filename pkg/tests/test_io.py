import json

import pytest

from agglo.io import (SchemaError, atomic_write, child_seed, column, fmt, read_csv, read_json,
                      write_csv, write_json, write_manifest)


def test_fmt_round_trips_floats():
    for v in (0.1, 1 / 3, 1e-300, 468.71):
        assert float(fmt(v)) == v
    assert fmt(None) == "" and fmt(float("nan")) == ""


def test_csv_round_trip(tmp_path):
    p = write_csv(tmp_path / "a.csv", "demo", ["x", "y"], [[1, 0.5], [2, 1 / 3]], {"k": "v"})
    meta, header, rows = read_csv(p, "demo", ["x"])
    assert meta == {"k": "v"} and header == ["x", "y"]
    assert column(p, header, rows, "y") == [0.5, 1 / 3]


def test_csv_errors_name_file_and_field(tmp_path):
    p = write_csv(tmp_path / "a.csv", "demo", ["x"], [["q"]])
    with pytest.raises(SchemaError, match="other"):
        read_csv(p, "other")
    with pytest.raises(SchemaError, match="missing column"):
        read_csv(p, "demo", ["z"])
    meta, header, rows = read_csv(p, "demo")
    with pytest.raises(SchemaError, match=str(p)):
        column(p, header, rows, "x", float)
    (tmp_path / "b.csv").write_text("# agglo demo v9\nx\n")
    with pytest.raises(SchemaError, match="version"):
        read_csv(tmp_path / "b.csv", "demo")


def test_json_kind_and_version(tmp_path):
    write_json(tmp_path / "a.json", {"schema_version": 1, "kind": "k"})
    assert read_json(tmp_path / "a.json", "k")["kind"] == "k"
    with pytest.raises(SchemaError, match="kind"):
        read_json(tmp_path / "a.json", "other")
    (tmp_path / "b.json").write_text("{}")
    with pytest.raises(SchemaError, match="schema_version"):
        read_json(tmp_path / "b.json")


def test_atomic_write_leaves_no_temp(tmp_path):
    atomic_write(tmp_path / "f.bin", b"abc")
    atomic_write(tmp_path / "f.bin", "def")
    assert (tmp_path / "f.bin").read_bytes() == b"def"
    assert [p.name for p in tmp_path.iterdir()] == ["f.bin"]


def test_child_seed_stable_and_distinct():
    assert child_seed(1, "a") == child_seed(1, "a")
    assert len({child_seed(1, "a"), child_seed(1, "b"), child_seed(2, "a")}) == 3
    assert 0 <= child_seed(2**64 - 1, "a") < 2**63


def test_manifest(tmp_path):
    out = atomic_write(tmp_path / "o.txt", "x")
    m = write_manifest(tmp_path / "m.json", "demo", {"a": 1}, 3, [], [out])
    doc = json.loads(m.read_text())
    assert doc["seed"] == 3 and doc["outputs"][0]["sha256"]
    assert set(doc) >= {"timestamp", "config_hash", "versions"}
