"""
Tests for StorageAdapter: config and piece loading, deterministic writers.
"""

import json
import math

import numpy as np
import pandas as pd
import pytest

from errors import DomainError, InputFileError, UsageError
from models import RunConfig
from storage import StorageAdapter, dumps, to_builtin


@pytest.fixture()
def storage(tmp_path):
    return StorageAdapter(str(tmp_path / "out"))


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------

def test_to_builtin_handles_numpy_and_complex():
    value = {"z": 1 + 2j, "arr": np.array([1.5, 2.5]), "n": np.int64(3), "flag": np.bool_(True)}
    assert to_builtin(value) == {"z": [1.0, 2.0], "arr": [1.5, 2.5], "n": 3, "flag": True}


def test_non_finite_becomes_null():
    assert to_builtin([math.nan, math.inf, 1.0]) == [None, None, 1.0]


def test_dumps_sorts_keys_and_round_trips_floats():
    text = dumps({"b": 0.1 + 0.2, "a": 1.0 / 3.0})
    assert text.index('"a"') < text.index('"b"')
    parsed = json.loads(text)
    assert parsed["b"] == 0.1 + 0.2
    assert parsed["a"] == 1.0 / 3.0


@pytest.mark.parametrize("value", [0.1 + 0.2, 1.0 / 3.0, math.pi * 1e-300, 2.0 ** -1074, 1.7976931348623157e308])
def test_json_floats_match_seventeen_digit_form(value):
    text = dumps({"x": value})
    printed = text[len('{"x": '):-1]
    digits = printed.lower().split("e")[0].replace("-", "").replace(".", "").strip("0")
    assert len(digits) <= 17
    assert float(printed) == float(f"{value:.17g}") == value


# ---------------------------------------------------------------------------
# Writers
# ---------------------------------------------------------------------------

def test_write_jsonl_one_record_per_line(storage):
    path = storage.write_jsonl("records.jsonl", [{"i": i} for i in range(4)])
    with open(path) as fh:
        lines = fh.read().splitlines()
    assert [json.loads(line)["i"] for line in lines] == [0, 1, 2, 3]


def test_write_table_keeps_seventeen_digits(storage):
    path = storage.write_table("t.csv", pd.DataFrame({"x": [1.0 / 3.0], "name": ["a"]}))
    table = pd.read_csv(path, float_precision="round_trip")
    assert list(table.columns) == ["x", "name"]
    assert table["x"][0] == 1.0 / 3.0


def test_write_error_record(storage):
    path = storage.write_error(UsageError("bad range", {"n": [1, 0]}))
    with open(path) as fh:
        record = json.load(fh)
    assert record == {"error": "UsageError", "message": "bad range", "exit_code": 2,
                      "details": {"n": [1, 0]}}


# ---------------------------------------------------------------------------
# Loaders
# ---------------------------------------------------------------------------

def test_load_config_defaults(storage, tmp_path):
    path = tmp_path / "run.json"
    path.write_text(json.dumps({"command": "geometry", "seed": 5}))
    config = storage.load_config(str(path))
    assert isinstance(config, RunConfig)
    assert config.seed == 5
    assert config.geometry.T_values[0] == 1.0


def test_load_config_bad_json(storage, tmp_path):
    path = tmp_path / "run.json"
    path.write_text("{not json")
    with pytest.raises(InputFileError):
        storage.load_config(str(path))


@pytest.mark.parametrize("data", [
    {"command": "plot"},
    {"seed": -1},
    {"glue": {"T_values": []}},
    {"energy": {"gap_tol": 0.0}},
    {"asymptotics": {"span": [1.0, 0.0]}},
])
def test_load_config_invalid_values(storage, tmp_path, data):
    path = tmp_path / "run.json"
    path.write_text(json.dumps(data))
    with pytest.raises(UsageError):
        storage.load_config(str(path))


def test_load_pieces(storage, tmp_path):
    path = tmp_path / "pieces.json"
    path.write_text(json.dumps({"R3": {"kind": "offset", "holonomy": [0.1, 0.2], "shift": [0.01, 0.0]}}))
    pieces = storage.load_pieces(str(path))
    assert pieces["R3"].kind == "offset"
    assert np.allclose(pieces["R3"].flat_holonomy, [0.11, 0.2])


def test_load_disk_map_piece(storage, tmp_path):
    corners = [[0.1, 0.2], [0.3, -0.1], [0.25, 0.35], [-0.2, 0.05]]
    path = tmp_path / "pieces.json"
    path.write_text(json.dumps({"R2": {"kind": "disk_map", "corners": corners, "bulge": [0.0, 0.1]}}))
    piece = storage.load_pieces(str(path))["R2"]
    assert piece.corners == tuple(tuple(c) for c in corners)
    assert piece.bulge == 0.1j
    assert np.allclose(piece.holonomy_at(0.0, -2.0, 2.0), [0.3, -0.1], atol=1e-12)


def test_load_disk_map_needs_four_corners(storage, tmp_path):
    path = tmp_path / "pieces.json"
    path.write_text(json.dumps({"R2": {"kind": "disk_map", "corners": [[0.0, 0.0]] * 3}}))
    with pytest.raises(UsageError):
        storage.load_pieces(str(path))


def test_load_pieces_rejects_unknown_names(storage, tmp_path):
    path = tmp_path / "pieces.json"
    path.write_text(json.dumps({"R9": {}}))
    with pytest.raises(UsageError):
        storage.load_pieces(str(path))


def test_load_pieces_rejects_spinor_on_path(storage, tmp_path):
    path = tmp_path / "pieces.json"
    path.write_text(json.dumps({"R1": {"kind": "gauge_path", "spinor": [[1.0, 0.0], [0.0, 0.0]]}}))
    with pytest.raises(DomainError):
        storage.load_pieces(str(path))


def test_load_trajectory_sorts_by_rho(storage, tmp_path):
    path = tmp_path / "traj.csv"
    pd.DataFrame({"rho": [2.0, 0.0, 1.0], "norm": [0.1, 1.0, 0.5]}).to_csv(path, index=False)
    table = storage.load_trajectory(str(path))
    assert list(table["rho"]) == [0.0, 1.0, 2.0]
    assert list(table["norm"]) == [1.0, 0.5, 0.1]


def test_load_trajectory_needs_columns(storage, tmp_path):
    path = tmp_path / "traj.csv"
    pd.DataFrame({"rho": [0.0, 1.0]}).to_csv(path, index=False)
    with pytest.raises(InputFileError):
        storage.load_trajectory(str(path))
