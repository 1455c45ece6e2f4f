import csv
import json

import numpy as np
import pytest

from fhtjoint.cli import main


def _rows(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def _files(d):
    return {p.name: p.read_bytes() for p in sorted(d.iterdir()) if p.is_file()}


def _same_outputs(a, b):
    fa, fb = _files(a), _files(b)
    ma, mb = (json.loads(f.pop("manifest.json")) for f in (fa, fb))
    ma["config"].pop("out")
    mb["config"].pop("out")
    return fa == fb and ma == mb


@pytest.fixture(scope="module")
def sim_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("sim")
    assert main(["simulate", "--preset", "q2-lod", "--n", "30", "--seed", "7", "--out", str(out)]) == 0
    return out


@pytest.fixture(scope="module")
def fit_dir(sim_dir, tmp_path_factory):
    out = tmp_path_factory.mktemp("fit")
    code = main(["fit", "--data", str(sim_dir), "--chains", "2", "--iter", "200", "--warmup", "100",
                 "--seed", "1", "--threads", "1", "--out", str(out)])
    assert code == 0
    return out


def test_simulate_outputs(sim_dir):
    assert {"panel.csv", "survival.csv", "truth.json", "manifest.json"} <= set(_files(sim_dir))
    rows = _rows(sim_dir / "panel.csv")
    assert rows[0] == ["subject_id", "time", "x1", "x2", "lod1", "lod2"]
    assert len({r[0] for r in rows[1:]}) == 30
    assert any(r[5] == "1" for r in rows[1:])
    manifest = json.loads((sim_dir / "manifest.json").read_text())
    assert manifest["command"] == "simulate" and manifest["config"]["seed"] == 7


def test_simulate_is_deterministic(sim_dir, tmp_path):
    assert main(["simulate", "--preset", "q2-lod", "--n", "30", "--seed", "7", "--out", str(tmp_path)]) == 0
    assert _same_outputs(tmp_path, sim_dir)


def test_rerun_from_manifest(sim_dir, tmp_path):
    assert main(["simulate", "--config", str(sim_dir / "manifest.json"), "--out", str(tmp_path)]) == 0
    assert _same_outputs(tmp_path, sim_dir)


def test_zero_subjects_is_config_error(tmp_path):
    assert main(["simulate", "--preset", "q1-lod", "--n", "0", "--out", str(tmp_path)]) == 2


def test_config_file_layering(tmp_path):
    cfg = tmp_path / "c.yaml"
    cfg.write_text("seed: 3\nscenario:\n  preset: q1-lod\n  overrides:\n    N: 12\n")
    out = tmp_path / "o"
    assert main(["simulate", "--config", str(cfg), "--n", "9", "--out", str(out)]) == 0
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["config"]["seed"] == 3
    assert len({r[0] for r in _rows(out / "survival.csv")[1:]}) == 9


def test_malformed_row_is_data_error(sim_dir, tmp_path, capsys):
    data = tmp_path / "data"
    data.mkdir()
    (data / "survival.csv").write_bytes((sim_dir / "survival.csv").read_bytes())
    lines = (sim_dir / "panel.csv").read_text().splitlines()
    fields = lines[3].split(",")
    fields[2] = "oops"
    lines[3] = ",".join(fields)
    (data / "panel.csv").write_text("\n".join(lines) + "\n")
    code = main(["fit", "--data", str(data), "--preset", "q2-lod", "--out", str(tmp_path / "f")])
    assert code == 3
    assert "panel.csv:4" in capsys.readouterr().err


def test_fit_outputs(fit_dir):
    files = _files(fit_dir)
    assert {"chain_1.csv", "chain_2.csv", "summary.csv", "diagnostics.json", "manifest.json"} <= set(files)
    rows = _rows(fit_dir / "summary.csv")
    names = {r[0] for r in rows[1:]}
    assert {"alpha[1]", "eta[7]", "beta[2,1]", "sigma[1,2]", "gamma[2]", "psi[1]"} <= names
    assert all(r[rows[0].index("rhat")] != "NA" for r in rows[1:])


def test_single_chain_rhat_unavailable(sim_dir, tmp_path):
    assert main(["fit", "--data", str(sim_dir), "--chains", "1", "--iter", "200", "--warmup", "100",
                 "--out", str(tmp_path)]) == 0
    rows = _rows(tmp_path / "summary.csv")
    col = rows[0].index("rhat")
    assert all(r[col] == "NA" for r in rows[1:])


def test_curves_profile_monotone(fit_dir, tmp_path):
    assert main(["curves", "--fit", str(fit_dir), "--profile", "fsh-var-high", "--out", str(tmp_path)]) == 0
    rows = _rows(tmp_path / "curves.csv")
    assert rows[0] == ["profile", "time", "mean", "lo", "hi"]
    mean = np.array([float(r[2]) for r in rows[1:] if r[0] == "fsh-var-high"])
    assert mean[0] == 1.0 and np.all(np.diff(mean) <= 1e-15)
    assert (tmp_path / "medians.csv").exists()


def test_unknown_profile_is_config_error(fit_dir, tmp_path):
    assert main(["curves", "--fit", str(fit_dir), "--profile", "b7-var-high", "--out", str(tmp_path)]) == 2


def test_ppc_tables(fit_dir, tmp_path):
    assert main(["ppc", "--fit", str(fit_dir), "--draws", "150", "--out", str(tmp_path)]) == 0
    rows = _rows(tmp_path / "ppc_longitudinal.csv")
    assert rows[0] == ["subject_id", "biomarker", "p_value"] and len(rows) == 1 + 60
    assert all(0 <= float(r[2]) <= 1 for r in rows[1:])
    assert len(_rows(tmp_path / "ppc_survival.csv")) == 5


def test_ppc_without_draws(fit_dir, sim_dir, tmp_path):
    assert main(["ppc", "--fit", str(sim_dir), "--out", str(tmp_path / "a")]) == 3
    broken = tmp_path / "broken"
    broken.mkdir()
    for name in ("manifest.json", "summary.csv"):
        (broken / name).write_bytes((fit_dir / name).read_bytes())
    assert main(["ppc", "--fit", str(broken), "--out", str(tmp_path / "b")]) == 3


def test_evaluate_columns(tmp_path):
    code = main(["evaluate", "--preset", "q1-lod", "--n", "20", "--reps", "1", "--chains", "2",
                 "--iter", "120", "--warmup", "60", "--threads", "1", "--out", str(tmp_path)])
    assert code == 0
    header = _rows(tmp_path / "metrics.csv")[0]
    assert header[:2] == ["parameter", "model"]
    assert {"coverage", "bias", "ail", "rmse"} <= {h.split("_")[0] for h in header}
