import json

import numpy as np
import pytest

from test_model import random_params
from saltmodel.baselines import ArhmmParams
from saltmodel.datagen import random_rotational_lds
from saltmodel.fileio import (DataError, SchemaVersionError, dumps_model, load_model,
                              load_series, load_states, load_trace, loads_model, model_to_dict,
                              save_model, save_series, save_states, save_trace)
from saltmodel.hmm import TransitionModel
from saltmodel.tensor import ShapeError


def models():
    rng = np.random.default_rng(0)
    arhmm = ArhmmParams(rng.normal(size=(2, 3, 3, 2)), rng.normal(size=(2, 3)),
                        np.tile(np.eye(3), (2, 1, 1)), TransitionModel.uniform(2, 0.7))
    return [random_params(1), random_params(2, cp=True), arhmm,
            random_rotational_lds(1, 2, 4, 0.8, 3)]


@pytest.mark.parametrize("idx", range(4))
def test_model_round_trip_is_exact(tmp_path, idx):
    m = models()[idx]
    path = tmp_path / "m.json"
    save_model(path, m)
    first = path.read_bytes()
    back = load_model(path)
    a, b = model_to_dict(m)["arrays"], model_to_dict(back)["arrays"]
    for k in a:
        assert a[k] == b[k]
    save_model(path, back)
    assert path.read_bytes() == first


def test_truncated_file_reports_byte_offset(tmp_path):
    text = dumps_model(models()[0])
    cut = text[:len(text) // 2]
    with pytest.raises(DataError, match=f"byte offset {len(cut.encode())}"):
        loads_model(cut)


def test_short_array_is_shape_error():
    doc = model_to_dict(models()[0])
    doc["arrays"]["U0"]["data"].pop()
    with pytest.raises(ShapeError):
        loads_model(json.dumps(doc))


def test_schema_version_mismatch():
    doc = model_to_dict(models()[0])
    doc["schema_version"] = 99
    with pytest.raises(SchemaVersionError):
        loads_model(json.dumps(doc))


def test_unknown_kind_and_layout():
    doc = model_to_dict(models()[0])
    with pytest.raises(DataError):
        loads_model(json.dumps({**doc, "kind": "HSMM"}))
    with pytest.raises(DataError):
        loads_model(json.dumps({**doc, "layout": "column-major"}))


def test_missing_file():
    with pytest.raises(DataError):
        load_model("/nonexistent/model.json")


def test_series_round_trip(tmp_path):
    y = np.random.default_rng(1).normal(size=(20, 3)) * 1e-7
    save_series(tmp_path / "y.csv", y)
    np.testing.assert_array_equal(load_series(tmp_path / "y.csv"), y)
    assert (tmp_path / "y.csv").read_text().splitlines()[0] == "t,y0,y1,y2"


def test_states_and_trace_round_trip(tmp_path):
    s = np.array([0, 2, 1, 1])
    save_states(tmp_path / "s.csv", s)
    np.testing.assert_array_equal(load_states(tmp_path / "s.csv"), s)
    ll = [-10.5, -3.25, -3.0]
    save_trace(tmp_path / "t.csv", ll)
    np.testing.assert_array_equal(load_trace(tmp_path / "t.csv"), ll)


def test_malformed_series(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("t,y0\n0,1.0\n1,abc\n")
    with pytest.raises(DataError):
        load_series(p)
