import csv
import json
import subprocess
import sys

import pytest

from mugrep.cli import dispatch

TOY_DIMS = {"hidden": 6, "attn": 5, "fusion_hidden": 8, "embed": 3}

GEN_CFG = {
    "generator": {
        "n_districts": 3, "n_communities": 25, "n_transactions": 300,
        "city_extent_m": 6000.0, "date_range_days": 365, "n_pois": 200,
        "n_stations": 40, "n_checkins": 1500, "n_trips": 600, "n_users": 250,
    },
    "training": {
        "max_epochs": 1, "batch_size": 64, "validation_days": 30,
        "test_days": 60, "dims": TOY_DIMS,
    },
}


@pytest.fixture(scope="module")
def cfg_path(tmp_path_factory):
    p = tmp_path_factory.mktemp("cfg") / "config.json"
    p.write_text(json.dumps(GEN_CFG))
    return p


@pytest.fixture(scope="module")
def cli_city(tmp_path_factory, cfg_path):
    out = tmp_path_factory.mktemp("cli") / "city"
    assert dispatch(["generate", "--seed", "7", "--config", str(cfg_path),
                     "--out", str(out)]) == 0
    return out


@pytest.fixture(scope="module")
def cli_run(tmp_path_factory, cli_city, cfg_path):
    run = tmp_path_factory.mktemp("cli") / "run1"
    assert dispatch(["train", str(cli_city), "--config", str(cfg_path),
                     "--seed", "0", "--out", str(run)]) == 0
    return run


def test_generate_then_describe(cli_city, capsys):
    assert dispatch(["describe", str(cli_city)]) == 0
    out = capsys.readouterr().out
    summary = json.loads(out)
    assert summary["transactions"] == 300
    assert summary["communities"] == 25


def test_train_writes_artifacts(cli_city, cli_run):
    assert (cli_run / "model.ckpt.json").exists()
    assert (cli_run / "train_log.csv").exists()
    with (cli_run / "train_log.csv").open() as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 1  # max_epochs 1
    assert set(rows[0]) == {"epoch", "train_loss", "val_loss"}
    # the train command also leaves the feature manifest beside the dataset
    assert (cli_city / "features.json").exists()


def test_evaluate_writes_metrics(cli_city, cli_run, cfg_path, tmp_path):
    out = tmp_path / "eval"
    assert dispatch(["evaluate", str(cli_city), str(cli_run / "model.ckpt.json"),
                     "--out", str(out)]) == 0
    metrics = json.loads((out / "metrics.json").read_text())
    assert {"mae", "mape", "rmse", "n_evaluated"} <= set(metrics)
    assert (out / "community_mape.csv").exists()


def test_ablate_row_count(cli_city, cfg_path, tmp_path):
    out = tmp_path / "ablate"
    assert dispatch(["ablate", str(cli_city), "--config", str(cfg_path),
                     "--variants", "full,noEvt", "--seeds", "0,1,2",
                     "--out", str(out)]) == 0
    with (out / "ablation_table.csv").open() as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 6  # variants x seeds
    assert {r["variant"] for r in rows} == {"full", "noEvt"}


def test_features_and_graphs_commands(cli_city, tmp_path):
    assert dispatch(["features", str(cli_city)]) == 0
    assert (cli_city / "features.json").exists()
    out = tmp_path / "graphs"
    assert dispatch(["graphs", str(cli_city), "--out", str(out)]) == 0
    for name in ["event_graph.bin", "event_graph.json", "intra_index.bin",
                 "community_edges.json"]:
        assert (out / name).exists()


def test_appraise_command(cli_city, cli_run, capsys):
    from mugrep.data import load_dataset

    ds = load_dataset(cli_city)
    attrs = json.dumps(ds.events[0].raw_attributes)
    code = dispatch(["appraise", str(cli_city), str(cli_run / "model.ckpt.json"),
                     "--community", str(ds.communities[0].id),
                     "--attributes", attrs])
    assert code == 0
    body = json.loads(capsys.readouterr().out)
    assert "unit_price_estimate" in body and "total_price" in body


def test_usage_errors_exit_1(capsys, tmp_path):
    assert dispatch(["generate", "--bogus-flag", "x", "--out", str(tmp_path / "z")]) == 1
    assert dispatch(["no-such-command"]) == 1
    assert dispatch([]) == 1
    err = capsys.readouterr().err
    assert "usage" in err.lower()


def test_runtime_errors_exit_2(capsys, tmp_path):
    assert dispatch(["describe", str(tmp_path / "missing_dir")]) == 2
    err = capsys.readouterr().err
    assert "error" in err.lower()


def test_console_entry_point(tmp_path):
    proc = subprocess.run(
        [sys.executable, "-m", "mugrep.cli", "describe", str(tmp_path / "nope")],
        capture_output=True, text=True,
    )
    assert proc.returncode == 2
    proc = subprocess.run([sys.executable, "-m", "mugrep.cli"],
                          capture_output=True, text=True)
    assert proc.returncode == 1


def test_generate_determinism_via_cli(cfg_path, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert dispatch(["generate", "--seed", "3", "--config", str(cfg_path),
                     "--out", str(a)]) == 0
    assert dispatch(["generate", "--seed", "3", "--config", str(cfg_path),
                     "--out", str(b)]) == 0
    for name in ["transactions.csv", "communities.csv", "latent.json"]:
        assert (a / name).read_bytes() == (b / name).read_bytes()
