from __future__ import annotations

import json

import pandas as pd
import pytest

from panelmsm import cli


def _write_config(path, **over):
    doc = {
        "schema_version": 1,
        "data": {"covariates": ["x"], "province": "province"},
        "inference": {"bootstrap": 12, "seed": 5},
    }
    doc.update(over)
    path.write_text(json.dumps(doc))
    return path


@pytest.fixture(scope="module")
def sim_csv(tmp_path_factory):
    out = tmp_path_factory.mktemp("sim") / "panel.csv"
    rc = cli.main(
        [
            "simulate", "--preset", "realism", "--out", str(out),
            "--n-units", "60", "--n-periods", "26", "--seed", "97",
        ]
    )
    assert rc == 0
    return out


def test_simulate_writes_csv(sim_csv):
    f = pd.read_csv(sim_csv)
    assert len(f) == 60 * 26
    for col in ("unit", "time", "province", "x", "treat", "y"):
        assert col in f.columns


def test_simulate_truth_prints_value(tmp_path, capsys):
    out = tmp_path / "p.csv"
    rc = cli.main(
        [
            "simulate", "--preset", "null", "--out", str(out),
            "--n-units", "20", "--n-periods", "10", "--truth",
        ]
    )
    assert rc == 0
    text = capsys.readouterr().out
    assert "truth" in text.lower()


def test_fit_roundtrip(tmp_path, sim_csv, capsys):
    cfg = _write_config(tmp_path / "cfg.json")
    out = tmp_path / "run1"
    rc = cli.main(
        ["fit", "--config", str(cfg), "--data", str(sim_csv), "--out", str(out)]
    )
    assert rc == 0
    assert (out / "results.csv").exists()
    assert not (out / "sensitivity.csv").exists()
    assert "coefficient" in capsys.readouterr().out


def test_fit_deterministic_outputs(tmp_path, sim_csv):
    cfg = _write_config(tmp_path / "cfg.json")
    a, b = tmp_path / "a", tmp_path / "b"
    for out in (a, b):
        rc = cli.main(
            ["fit", "--config", str(cfg), "--data", str(sim_csv), "--out", str(out)]
        )
        assert rc == 0
    assert (a / "results.csv").read_bytes() == (b / "results.csv").read_bytes()


def test_seed_override_changes_inference(tmp_path, sim_csv):
    cfg = _write_config(tmp_path / "cfg.json")
    a, b = tmp_path / "a", tmp_path / "b"
    cli.main(["fit", "--config", str(cfg), "--data", str(sim_csv), "--out", str(a)])
    cli.main(
        ["fit", "--config", str(cfg), "--data", str(sim_csv), "--out", str(b),
         "--seed", "99"]
    )
    ra = pd.read_csv(a / "results.csv")
    rb = pd.read_csv(b / "results.csv")
    # same point estimate, different bootstrap draw
    assert ra["coefficient"][0] == rb["coefficient"][0]
    assert ra["se"][0] != rb["se"][0]


def test_balance_prints_table(tmp_path, sim_csv, capsys):
    cfg = _write_config(tmp_path / "cfg.json")
    out = tmp_path / "bal"
    rc = cli.main(
        ["balance", "--config", str(cfg), "--data", str(sim_csv), "--out", str(out)]
    )
    assert rc == 0
    text = capsys.readouterr().out
    assert "smd" in text.lower()
    assert (out / "balance.csv").exists()


def test_sensitivity_subcommand_writes_curve(tmp_path, sim_csv):
    cfg = _write_config(
        tmp_path / "cfg.json",
        sensitivity={"phis": [-0.25, 0.0, 0.25], "bootstrap": 8},
    )
    out = tmp_path / "sens"
    rc = cli.main(
        ["sensitivity", "--config", str(cfg), "--data", str(sim_csv),
         "--out", str(out), "--b", "8"]
    )
    assert rc == 0
    curve = pd.read_csv(out / "sensitivity.csv")
    assert list(curve["phi"]) == [-0.25, 0.0, 0.25]


def test_positivity_subcommand_writes_report(tmp_path, sim_csv):
    cfg = _write_config(tmp_path / "cfg.json", positivity={"bootstrap": 6})
    out = tmp_path / "pos"
    rc = cli.main(
        ["positivity", "--config", str(cfg), "--data", str(sim_csv), "--out",
         str(out)]
    )
    assert rc == 0
    text = (out / "positivity.txt").read_text()
    assert "practical positivity violation" in text


def test_missing_config_file_exits_2(tmp_path, sim_csv, capsys):
    rc = cli.main(
        ["fit", "--config", str(tmp_path / "none.json"), "--data", str(sim_csv),
         "--out", str(tmp_path / "o")]
    )
    assert rc == 2
    assert "none.json" in capsys.readouterr().err


def test_missing_data_file_exits_2(tmp_path, capsys):
    cfg = _write_config(tmp_path / "cfg.json")
    rc = cli.main(
        ["fit", "--config", str(cfg), "--data", str(tmp_path / "ghost.csv"),
         "--out", str(tmp_path / "o")]
    )
    assert rc == 2
    assert "ghost.csv" in capsys.readouterr().err


def test_unknown_config_key_exits_2(tmp_path, sim_csv, capsys):
    cfg = _write_config(tmp_path / "cfg.json", plots={"dpi": 300})
    rc = cli.main(
        ["fit", "--config", str(cfg), "--data", str(sim_csv),
         "--out", str(tmp_path / "o")]
    )
    assert rc == 2
    assert "plots" in capsys.readouterr().err


def test_bad_cell_exits_1_naming_row(tmp_path, capsys):
    data = tmp_path / "bad.csv"
    data.write_text(
        "unit,time,province,x,treat,y\n"
        "1,1,0,0.5,0,0\n"
        "1,2,0,abc,1,0\n"
    )
    cfg = _write_config(tmp_path / "cfg.json")
    rc = cli.main(
        ["fit", "--config", str(cfg), "--data", str(data),
         "--out", str(tmp_path / "o")]
    )
    assert rc == 1
    err = capsys.readouterr().err
    assert "abc" in err and "x" in err


def test_all_subcommand_writes_everything(tmp_path, sim_csv):
    cfg = _write_config(
        tmp_path / "cfg.json",
        sensitivity={"phis": [-0.25, 0.0, 0.25], "bootstrap": 6},
        positivity={"bootstrap": 6},
    )
    out = tmp_path / "everything"
    rc = cli.main(
        ["all", "--config", str(cfg), "--data", str(sim_csv), "--out", str(out),
         "--b", "8"]
    )
    assert rc == 0
    for name in ("weights.csv", "balance.csv", "results.csv", "run.log",
                 "sensitivity.csv", "positivity.txt"):
        assert (out / name).exists(), name
