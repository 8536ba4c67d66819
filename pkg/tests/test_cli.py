import json
import subprocess
import sys

import numpy as np
import pytest

from misfit.cli import EXIT_DIVERGED, EXIT_IO, EXIT_OK, EXIT_USER, main, validate_run_config, UserError


def write_config(path, **fields):
    path.write_text(json.dumps(fields))
    return str(path)


def test_gen_line_count_and_determinism(tmp_path):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    assert main(["gen", "--dataset", "bimodal1d", "--n", "1000", "--seed", "5", "--out", str(a)]) == EXIT_OK
    main(["gen", "--dataset", "bimodal1d", "--n", "1000", "--seed", "5", "--out", str(b)])
    assert len(a.read_text().splitlines()) == 1001
    assert a.read_bytes() == b.read_bytes()
    assert b"\r" not in a.read_bytes()


def test_gen_errors(tmp_path, capsys):
    assert main(["gen", "--dataset", "nope", "--n", "3", "--out", str(tmp_path / "x.csv")]) == EXIT_USER
    assert "unimodal1d" in capsys.readouterr().err
    assert main(["gen", "--dataset", "unimodal1d", "--n", "0", "--out", str(tmp_path / "x.csv")]) == EXIT_USER
    assert main(["gen", "--dataset", "unimodal1d", "--n", "3", "--out", str(tmp_path / "no" / "x.csv")]) == EXIT_IO


def test_usage_errors_are_user_errors():
    assert main(["gen", "--dataset", "unimodal1d"]) == EXIT_USER
    assert main(["frobnicate"]) == EXIT_USER
    # long-form flags only: prefixes are not accepted
    assert main(["gen", "--data", "unimodal1d", "--n", "3", "--out", "x.csv"]) == EXIT_USER


@pytest.mark.parametrize(
    "doc, pointer",
    [
        ({"dataset": "unimodal1d", "model": "glc", "epochs": 0}, "/epochs"),
        ({"dataset": "unimodal1d", "model": "glc", "hidden": [8, "x"]}, "/hidden/1"),
        ({"dataset": "unimodal1d", "model": "glc", "colour": "red"}, "/colour"),
        ({"dataset": "unimodal1d", "model": "glx"}, "/model"),
        ({"model": "glc"}, "/"),
    ],
)
def test_schema_errors_report_pointer(doc, pointer):
    with pytest.raises(UserError) as err:
        validate_run_config(doc)
    assert str(err.value).startswith(pointer + ":")


def test_train_eval_curves_round_trip(tmp_path, capsys):
    cfg = write_config(tmp_path / "run.json", dataset="unimodal1d", model="glc", epochs=50, out_dir=str(tmp_path / "run"))
    assert main(["train", "--config", cfg]) == EXIT_OK
    model_path = tmp_path / "run" / "model.json"
    first = model_path.read_bytes()
    loss = (tmp_path / "run" / "loss.csv").read_text().splitlines()
    assert loss[0] == "step,loss" and len(loss) == 51
    assert main(["train", "--config", cfg]) == EXIT_OK
    assert model_path.read_bytes() == first

    report = tmp_path / "r.json"
    assert main(["eval", "--model", str(model_path), "--out", str(report)]) == EXIT_OK
    d = json.loads(report.read_text())
    assert d["test_mse"] is not None and np.isfinite(d["test_nll_per_sample"])
    assert main(["eval", "--model", str(model_path), "--out", str(tmp_path / "r.csv")]) == EXIT_OK
    assert (tmp_path / "r.csv").read_text().splitlines()[0] == "test_nll_per_sample,test_mse"

    curves = tmp_path / "c.csv"
    assert main(["curves", "--model", str(model_path), "--grid", "-6,6,241", "--out", str(curves)]) == EXIT_OK
    rows = curves.read_text().splitlines()
    assert len(rows) == 242
    body = np.array([r.split(",") for r in rows[1:]], dtype=float)
    assert np.allclose(body[:, 1], 2.517551, atol=1e-6)
    assert np.all(body[:, 2] == 0) and np.all(body[:, 3] == 0)


def test_train_on_csv_and_eval_on_csv(tmp_path):
    data = tmp_path / "d.csv"
    main(["gen", "--dataset", "bimodal1d", "--n", "30", "--seed", "1", "--out", str(data)])
    cfg = write_config(tmp_path / "run.json", dataset="bimodal1d", model="gl", epochs=5)
    assert main(["train", "--config", cfg, "--data", str(data), "--out-dir", str(tmp_path / "m")]) == EXIT_OK
    assert main(["eval", "--model", str(tmp_path / "m" / "model.json"), "--data", str(data)]) == EXIT_OK


def test_eval_flow_model_has_no_mse(tmp_path):
    cfg = write_config(tmp_path / "run.json", dataset="bimodal1d", model="fl", n=40, epochs=3, out_dir=str(tmp_path))
    main(["train", "--config", cfg])
    main(["eval", "--model", str(tmp_path / "model.json"), "--out", str(tmp_path / "r.csv")])
    assert (tmp_path / "r.csv").read_text().splitlines()[1].endswith(",NA")


def test_bayesian_artifact_round_trip(tmp_path):
    cfg = write_config(tmp_path / "run.json", dataset="unimodal1d", model="gl", bayes=True, epochs=3, out_dir=str(tmp_path))
    assert main(["train", "--config", cfg]) == EXIT_OK
    doc = json.loads((tmp_path / "model.json").read_text())
    assert "posterior" in doc and "weights" not in doc
    assert main(["curves", "--model", str(tmp_path / "model.json"), "--grid", "-1,1,3", "--draws", "5", "--out", str(tmp_path / "c.csv")]) == EXIT_OK


def test_divergence_exit_code(tmp_path):
    cfg = write_config(tmp_path / "run.json", dataset="bimodal1d", model="gl", lr=1e6, epochs=200, out_dir=str(tmp_path))
    assert main(["train", "--config", cfg]) == EXIT_DIVERGED


def test_table_needs_two_seeds(tmp_path):
    assert main(["table", "--table", "S2", "--seeds", "1", "--out", str(tmp_path / "t")]) == EXIT_USER
    assert main(["table", "--table", "S9", "--seeds", "3", "--out", str(tmp_path / "t")]) == EXIT_USER


def test_table_layout(tmp_path, monkeypatch):
    from misfit import training as tr

    real = tr.table_configs
    monkeypatch.setattr(tr, "table_configs", lambda *a, **k: real(*a, **{**k, "epochs": 2, "eval_draws": 3}))
    out = tmp_path / "res" / "s2"
    assert main(["table", "--table", "S2", "--seeds", "2", "--out", str(out)]) == EXIT_OK
    lines = (tmp_path / "res" / "s2.csv").read_text().splitlines()
    assert lines[0] == "model,nll_mean,nll_sem,mse_mean,mse_sem"
    assert [l.split(",")[0] for l in lines[1:]] == ["GLc", "GL", "FL", "BNN+GLc", "BNN+GL", "BNN+FL"]
    assert lines[2].endswith("NA,NA") and not lines[1].endswith("NA")
    doc = json.loads((tmp_path / "res" / "s2.json").read_text())
    assert len(doc["rows"]) == 6 and len(doc["rows"][0]["nll_per_seed"]) == 2


def test_module_entry_point(tmp_path):
    out = tmp_path / "d.csv"
    proc = subprocess.run(
        [sys.executable, "-m", "misfit", "gen", "--dataset", "unimodal1d", "--n", "4", "--out", str(out)],
        capture_output=True,
    )
    assert proc.returncode == 0 and out.exists()
