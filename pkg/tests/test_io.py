from pathlib import Path

import numpy as np
import pytest

from fhtjoint.io import (DataError, read_dataset, read_json, read_panel_csv, read_survival_csv,
                         to_jsonable, write_dataset, write_json)
from fhtjoint.simulate import generate_dataset, get_preset


@pytest.fixture
def written(tmp_path):
    cfg = get_preset("q2-lod", N=40)
    data, _ = generate_dataset(cfg, np.random.default_rng(0))
    panel, survival = write_dataset(tmp_path, data)
    return cfg, data, Path(panel), Path(survival)


def test_roundtrip_identical(written):
    cfg, data, panel, survival = written
    back, ids = read_dataset(panel, survival, lod=cfg.lod)
    assert [int(i) for i in ids] == list(range(1, 41))
    for a, b in [(data.panel.subject, back.panel.subject), (data.panel.time, back.panel.time),
                 (data.panel.values, back.panel.values), (data.panel.censored, back.panel.censored),
                 (data.survival.time, back.survival.time), (data.survival.event, back.survival.event)]:
        np.testing.assert_array_equal(a, b)


def test_lod_inferred_from_flags(written):
    _, data, panel, _ = written
    back, _ = read_panel_csv(panel)
    assert back.lod[0] == -np.inf and back.lod[1] == data.panel.lod[1]


def test_lod_mismatch(written):
    _, _, panel, _ = written
    with pytest.raises(DataError):
        read_panel_csv(panel, lod=[-np.inf, 0.123])


def _corrupt(path, line, column, text):
    rows = path.read_text().splitlines()
    fields = rows[line - 1].split(",")
    fields[column] = text
    rows[line - 1] = ",".join(fields)
    path.write_text("\n".join(rows) + "\n")


def test_non_numeric_biomarker_names_line(written):
    _, _, panel, _ = written
    _corrupt(panel, 5, 2, "abc")
    with pytest.raises(DataError, match=rf"{panel.name}:5"):
        read_panel_csv(panel)


def test_bad_flag(written):
    _, _, panel, _ = written
    _corrupt(panel, 4, -1, "2")
    with pytest.raises(DataError, match=":4"):
        read_panel_csv(panel)


def test_bad_header(tmp_path):
    p = tmp_path / "p.csv"
    p.write_text("id,time,x1,lod1\n1,0,1.0,0\n")
    with pytest.raises(DataError):
        read_panel_csv(p)


def test_duplicate_visit_time(tmp_path):
    p = tmp_path / "p.csv"
    p.write_text("subject_id,time,x1,lod1\n1,0.0,1.0,0\n1,0.0,2.0,0\n")
    with pytest.raises(DataError, match=":3"):
        read_panel_csv(p)


def test_unsorted_rows_are_regrouped(tmp_path):
    p = tmp_path / "p.csv"
    p.write_text("subject_id,time,x1,lod1\nb,2.0,1.0,0\na,0.0,5.0,0\nb,1.0,3.0,0\n")
    panel, ids = read_panel_csv(p)
    assert list(ids) == ["b", "a"]
    np.testing.assert_array_equal(panel.time, [1.0, 2.0, 0.0])
    np.testing.assert_array_equal(panel.values[:, 0], [3.0, 1.0, 5.0])


def test_subject_mismatch(written, tmp_path):
    _, _, panel, survival = written
    lines = survival.read_text().splitlines()
    survival.write_text("\n".join(lines[:-1]) + "\n")
    with pytest.raises(DataError, match="no outcome for subject 40"):
        read_dataset(panel, survival)
    extra = tmp_path / "extra.csv"
    extra.write_text("\n".join(lines + ["999,3.0,1"]) + "\n")
    with pytest.raises(DataError):
        read_dataset(panel, extra)


@pytest.mark.parametrize("row", ["1,0.0,1", "1,2.0,3", "1,x,1"])
def test_bad_survival_rows(tmp_path, row):
    p = tmp_path / "s.csv"
    p.write_text("subject_id,time,event\n" + row + "\n")
    with pytest.raises(DataError, match=":2"):
        read_survival_csv(p)


def test_duplicate_survival_subject(tmp_path):
    p = tmp_path / "s.csv"
    p.write_text("subject_id,time,event\n1,2.0,1\n1,3.0,0\n")
    with pytest.raises(DataError):
        read_survival_csv(p)


def test_json_roundtrip(tmp_path):
    obj = {"a": np.float64(1.5), "b": np.arange(3), "c": np.inf, "d": float("nan"), "e": (1, 2)}
    write_json(tmp_path / "x.json", obj)
    assert read_json(tmp_path / "x.json") == {"a": 1.5, "b": [0, 1, 2], "c": "inf", "d": None,
                                              "e": [1, 2]}
    assert to_jsonable(-np.inf) == "-inf"
