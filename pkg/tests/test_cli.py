import csv
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from adaptive_dbn.cli import main, read_config
from adaptive_dbn.data import load_csv
from adaptive_dbn.dbn import load_model

CONFIG = """\
[run]
seed = {seed}
output_dir = out

[data]
source = {source}
{data}

[dbn]
n_hidden = 8
epochs = 3
max_layers = 2
head_epochs = 300

[relearn]
threshold_quantiles = 0.0, 0.5
histogram_bins = 5
"""

RELEARN_FILES = {"summary.txt", "kl_hist_p_q1.csv", "kl_hist_p_q2.csv", "kl_aggregate.csv", "sweep.csv"}


def write_config(directory, seed=0, source="fixture", data="n_per_class = 100\noverlap = 0.6", extra=""):
    directory.mkdir(parents=True, exist_ok=True)
    path = directory / "run.ini"
    path.write_text(CONFIG.format(seed=seed, source=source, data=data) + extra)
    return path


def snapshot(root):
    return {p.relative_to(root): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = write_config(root / "run")
    assert main(["train", "--config", str(cfg)]) == 0
    return cfg, root / "run" / "out" / "model.json"


def test_missing_config(tmp_path, capsys):
    missing = tmp_path / "nowhere.ini"
    assert main(["train", "--config", str(missing)]) == 1
    assert str(missing) in capsys.readouterr().err


def test_unknown_key_named(tmp_path, capsys):
    cfg = write_config(tmp_path, extra="bogus_key = 1\n")
    assert main(["train", "--config", str(cfg)]) == 1
    assert "bogus_key" in capsys.readouterr().err


@pytest.mark.parametrize("line,key", [("overlap = 1.5", "overlap"), ("n_per_class = many", "n_per_class")])
def test_invalid_value_named(tmp_path, capsys, line, key):
    cfg = write_config(tmp_path, data=line)
    assert main(["fixture", "--config", str(cfg)]) == 1
    assert key in capsys.readouterr().err


def test_invalid_dbn_parameter(tmp_path, capsys):
    cfg = write_config(tmp_path)
    cfg.write_text(cfg.read_text().replace("n_hidden = 8", "n_hidden = 8\nannihilate_threshold = 0.7"))
    assert main(["train", "--config", str(cfg)]) == 1
    assert "annihilate_threshold" in capsys.readouterr().err


def test_usage_error_exit_code():
    with pytest.raises(SystemExit) as info:
        main(["train"])
    assert info.value.code == 1


def test_relative_paths_resolve_against_config(tmp_path):
    cfg = read_config(write_config(tmp_path / "a" / "b"))
    assert cfg.output_dir == tmp_path / "a" / "b" / "out"


def test_data_error_exit_code(tmp_path, capsys):
    (tmp_path / "bad.csv").write_text("label,f0\na,0.1\nb,oops\n")
    cfg = write_config(tmp_path, source="csv", data="csv_path = bad.csv")
    assert main(["train", "--config", str(cfg)]) == 2
    err = capsys.readouterr().err
    assert "bad.csv" in err and "row 3" in err


def test_train_writes_reloadable_model(trained):
    cfg, model_path = trained
    out = model_path.parent
    assert {p.name for p in out.iterdir()} >= {"model.json", "train_log.csv", "train_events.csv", "head_loss.csv"}
    model = load_model(model_path)
    from adaptive_dbn.cli import load_dataset
    ds = load_dataset(read_config(cfg))
    assert np.mean(model.predict(ds.X) == ds.labels) > 0.9


def test_train_is_byte_identical(trained, tmp_path):
    cfg, model_path = trained
    other = write_config(tmp_path / "again")
    assert main(["train", "--config", str(other)]) == 0
    for name in ("model.json", "train_log.csv", "train_events.csv", "head_loss.csv"):
        assert (tmp_path / "again" / "out" / name).read_bytes() == (model_path.parent / name).read_bytes()


def test_fixture_command(tmp_path):
    cfg = write_config(tmp_path)
    assert main(["fixture", "--config", str(cfg)]) == 0
    ds = load_csv(tmp_path / "out" / "fixture.csv")
    assert len(ds) == 200 and ds.has_affect
    first = (tmp_path / "out" / "fixture.csv").read_bytes()
    assert main(["fixture", "--config", str(cfg)]) == 0
    assert (tmp_path / "out" / "fixture.csv").read_bytes() == first


def test_eval_outputs(trained):
    cfg, model_path = trained
    assert main(["eval", "--config", str(cfg), "--model", str(model_path)]) == 0
    out = model_path.parent / "eval"
    assert {p.name for p in out.iterdir()} == {"confusion.csv", "class_report.csv", "classification_ratio.csv",
                                              "report.txt"}
    rows = list(csv.reader(open(out / "classification_ratio.csv")))
    ratios = [float(r[1]) for r in rows[1:-1]]
    assert rows[-1][0] == "average"
    assert abs(float(rows[-1][1]) - np.mean(ratios)) <= 0.05 + 1e-9


def test_eval_perfect_fit_is_diagonal(tmp_path):
    cfg = write_config(tmp_path, data="n_per_class = 100\noverlap = 0.0")
    assert main(["train", "--config", str(cfg)]) == 0
    assert main(["eval", "--config", str(cfg), "--model", str(tmp_path / "out" / "model.json")]) == 0
    rows = list(csv.reader(open(tmp_path / "out" / "eval" / "confusion.csv")))
    assert rows == [["true\\predicted", "anger", "disgust"], ["anger", "100", "0"], ["disgust", "0", "100"]]


def test_relearn_degenerate_partition(tmp_path, capsys):
    cfg = write_config(tmp_path, data="n_per_class = 100\noverlap = 0.0")
    assert main(["train", "--config", str(cfg)]) == 0
    assert main(["relearn", "--config", str(cfg), "--model", str(tmp_path / "out" / "model.json")]) == 3
    assert "degenerate partition" in capsys.readouterr().err


def test_relearn_missing_model(tmp_path, capsys):
    cfg = write_config(tmp_path)
    assert main(["relearn", "--config", str(cfg), "--model", str(tmp_path / "none.json")]) == 2
    assert "none.json" in capsys.readouterr().err


def test_relearn_manifest_and_rerun(trained, tmp_path):
    _, model_path = trained
    cfg = write_config(tmp_path / "run")
    before = snapshot(tmp_path)
    assert main(["relearn", "--config", str(cfg), "--model", str(model_path)]) == 0
    after = snapshot(tmp_path)
    assert all(p.parts[:2] == ("run", "out") for p in set(after) - set(before))

    out = tmp_path / "run" / "out" / "relearn"
    sweep = list(csv.DictReader(open(out / "sweep.csv")))
    assert len(sweep) == 2
    scatters = {f"scatter_{i:02d}_theta_{float(row['theta']):.6g}.csv" for i, row in enumerate(sweep)}
    assert {p.name for p in out.iterdir()} == RELEARN_FILES | scatters

    agg = list(csv.reader(open(out / "kl_aggregate.csv")))
    assert [r[0] for r in agg] == ["pair", "KL(P;Q1)", "KL(P;Q2)"]
    assert float(agg[2][1]) > float(agg[1][1])

    first = snapshot(out)
    assert main(["relearn", "--config", str(cfg), "--model", str(model_path)]) == 0
    assert snapshot(out) == first


def test_console_script_module_entry(tmp_path):
    cfg = write_config(tmp_path)
    proc = subprocess.run([sys.executable, "-m", "adaptive_dbn.cli", "fixture", "--config", str(cfg)],
                          capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    assert (tmp_path / "out" / "fixture.csv").is_file()
