import json

import numpy as np
import pytest

from numerics.core_types import Field, make_grid
from numerics.exceptions import DataIntegrityError, GeometryError
from numerics.initial_data import make_initial
from utils.snapshot_io import (
    fmt,
    load_store,
    read_csv,
    read_json,
    read_snapshot,
    save_store,
    write_csv,
    write_json,
    write_snapshot,
)


def test_snapshot_round_trip_is_bit_exact(tmp_path, grid_2d):
    rng = np.random.default_rng(3)
    field = Field(grid_2d, rng.uniform(0.0, 1.0, grid_2d.shape))
    path = tmp_path / "u.psf"
    write_snapshot(path, field)
    back = read_snapshot(path)
    assert back.grid == grid_2d
    np.testing.assert_array_equal(back.values, field.values)
    assert not (tmp_path / "u.psf.tmp").exists()


def test_snapshot_header(tmp_path, grid_radial):
    path = tmp_path / "v.psf"
    write_snapshot(path, Field(grid_radial, np.zeros(grid_radial.shape)))
    header = path.read_bytes().split(b"\n", 1)[0].decode("ascii")
    assert header == "PSFLOW1 radial:3 41 1"
    assert read_snapshot(path).grid.radial_dim == 3


def test_truncated_snapshot_rejected(tmp_path, grid_1d):
    path = tmp_path / "v.psf"
    write_snapshot(path, Field(grid_1d, np.ones(grid_1d.shape)))
    path.write_bytes(path.read_bytes()[:-8])
    with pytest.raises(DataIntegrityError, match="payload bytes"):
        read_snapshot(path)


def test_bad_magic_and_missing_header(tmp_path):
    path = tmp_path / "v.psf"
    path.write_bytes(b"NOTPSF cartesian_1d 3 1\n" + bytes(24))
    with pytest.raises(DataIntegrityError, match="not a PSFLOW1"):
        read_snapshot(path)
    path.write_bytes(bytes(24))
    with pytest.raises(DataIntegrityError, match="header"):
        read_snapshot(path)
    path.write_bytes(b"PSFLOW1 cartesian_2d 3 1\n" + bytes(24))
    with pytest.raises(DataIntegrityError, match="malformed"):
        read_snapshot(path)


def test_fmt_uses_round_trip_precision():
    assert fmt(0.1) == "0.10000000000000001"
    assert fmt(3) == "3"
    assert fmt(True) == "1"
    assert float(fmt(np.pi)) == np.pi


def test_csv_round_trip(tmp_path):
    path = tmp_path / "table.csv"
    write_csv(path, ["t", "value"], [[0.0, 1.0 / 3.0], [0.5, 2.0]])
    assert path.read_text().splitlines()[1] == "0,0.33333333333333331"
    header, data = read_csv(path)
    assert header == ["t", "value"]
    assert data[0, 1] == 1.0 / 3.0


def test_json_is_deterministic_and_portable(tmp_path):
    first, second = tmp_path / "a.json", tmp_path / "b.json"
    payload = {"b": np.float64(1.5), "a": [np.int64(2), float("nan"), np.inf], "c": np.bool_(True)}
    write_json(first, payload)
    write_json(second, dict(reversed(list(payload.items()))))
    assert first.read_bytes() == second.read_bytes()
    assert read_json(first) == {"a": [2, "nan", "inf"], "b": 1.5, "c": True}
    json.loads(first.read_text())


def test_store_round_trip(tmp_path, prototype_store):
    save_store(prototype_store, tmp_path / "prototype")
    back = load_store(tmp_path / "prototype")
    assert back.extinction_time == prototype_store.extinction_time
    assert len(back.entries) == len(prototype_store.entries)
    assert len(back.ledger) == len(prototype_store.ledger)
    np.testing.assert_array_equal(back.last.field.values, prototype_store.last.field.values)
    np.testing.assert_array_equal(back.ledger_column("gamma"), prototype_store.ledger_column("gamma"))


def test_store_with_missing_snapshot(tmp_path, prototype_store):
    directory = tmp_path / "prototype"
    save_store(prototype_store, directory)
    (directory / "snapshots" / "v_000001.psf").unlink()
    with pytest.raises(DataIntegrityError, match="missing"):
        load_store(directory)


def test_store_without_index(tmp_path):
    with pytest.raises(DataIntegrityError):
        load_store(tmp_path)


def test_file_preset_reads_a_snapshot(tmp_path, params, u0_1d):
    path = tmp_path / "u0.psf"
    write_snapshot(path, u0_1d)
    field = make_initial("file", u0_1d.grid, params, path=path)
    np.testing.assert_array_equal(field.values, u0_1d.values)
    with pytest.raises(GeometryError):
        make_initial("file", make_grid("cartesian_1d", [1.0], [11]), params, path=path)
