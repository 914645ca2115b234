import json

import numpy as np
import pytest

from fracnetid import TimeSeriesMatrix
from fracnetid.dataio import config_from_dict, load_config, load_csv, save_csv
from fracnetid.exceptions import DataFormatError


def test_small_csv_loads(tmp_path):
    path = tmp_path / "d.csv"
    path.write_text("a,b\n1.0,2.0\n3.0,4.0\n5.0,6.0\n")
    ts = load_csv(path)
    assert ts.channel_labels == ["a", "b"]
    assert ts.values.shape == (2, 3)
    assert np.array_equal(ts.values, [[1.0, 3.0, 5.0], [2.0, 4.0, 6.0]])


def test_sample_rate_annotation(tmp_path):
    path = tmp_path / "d.csv"
    path.write_text("# sample_rate=160.0\nch0\n0.5\n0.25\n")
    ts = load_csv(path)
    assert ts.sample_rate == 160.0


def test_missing_file_raises():
    with pytest.raises(DataFormatError, match="not found"):
        load_csv("/nonexistent/file.csv")


def test_ragged_row_names_line(tmp_path):
    path = tmp_path / "d.csv"
    path.write_text("a,b\n1.0,2.0\n3.0\n")
    with pytest.raises(DataFormatError, match=":3"):
        load_csv(path)


def test_non_numeric_cell_names_position(tmp_path):
    path = tmp_path / "d.csv"
    path.write_text("a,b\n1.0,2.0\n3.0,oops\n")
    with pytest.raises(DataFormatError, match="column 2"):
        load_csv(path)


def test_round_trip_bitwise(tmp_path):
    rng = np.random.default_rng(0)
    values = rng.normal(size=(4, 25)) * np.logspace(-8, 8, 4)[:, None]
    ts = TimeSeriesMatrix(values=values, channel_labels=list("wxyz"), sample_rate=128.0)
    path = tmp_path / "rt.csv"
    save_csv(ts, path)
    back = load_csv(path)
    assert np.array_equal(back.values, values)
    assert back.channel_labels == list("wxyz")
    assert back.sample_rate == 128.0


def valid_config_doc(tmp_path):
    return {
        "format_version": 1,
        "dataset": str(tmp_path / "d.csv"),
        "observed_ids": [0, 1],
        "hidden_ids": [2],
        "alpha_obs": [0.7, 1.1],
        "alpha_lat": [0.8],
        "em": {"seed": 3, "max_iter": 50},
        "horizon": 5,
        "seeds": 2,
    }


def test_config_parses(tmp_path):
    cfg = config_from_dict(valid_config_doc(tmp_path))
    assert cfg.m == 1
    assert cfg.em.seed == 3
    assert cfg.em.max_iter == 50
    assert cfg.horizon == 5


def test_config_rejects_unknown_top_key(tmp_path):
    doc = valid_config_doc(tmp_path)
    doc["lambda_weight"] = 0.1
    with pytest.raises(DataFormatError, match="unknown keys"):
        config_from_dict(doc)


def test_config_rejects_unknown_em_key(tmp_path):
    doc = valid_config_doc(tmp_path)
    doc["em"]["tolerance"] = 1e-3
    with pytest.raises(DataFormatError, match="unknown em keys"):
        config_from_dict(doc)


def test_config_rejects_wrong_version(tmp_path):
    doc = valid_config_doc(tmp_path)
    doc["format_version"] = 99
    with pytest.raises(DataFormatError, match="format_version"):
        config_from_dict(doc)


def test_config_rejects_alpha_length_mismatch(tmp_path):
    doc = valid_config_doc(tmp_path)
    doc["alpha_obs"] = [0.7]
    with pytest.raises(DataFormatError, match="alpha_obs"):
        config_from_dict(doc)


def test_config_rejects_overlapping_ids(tmp_path):
    doc = valid_config_doc(tmp_path)
    doc["hidden_ids"] = [1]
    doc["alpha_lat"] = [0.8]
    with pytest.raises(DataFormatError, match="overlap"):
        config_from_dict(doc)


def test_config_file_round_trip(tmp_path):
    doc = valid_config_doc(tmp_path)
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(doc))
    cfg = load_config(path)
    assert cfg.observed_ids == [0, 1]
