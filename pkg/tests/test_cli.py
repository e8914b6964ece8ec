import json

import numpy as np
import pytest

from greensentry.cli import EXIT_DATA, EXIT_OK, EXIT_USAGE, run
from greensentry.sensor_data import FEATURES, Dataset, format_asctime, read_csv, write_csv
from greensentry.simulate import SimConfig, simulate

FAST = ["--node-size", "8", "--epochs", "1", "--batch-size", "64"]


def _manifest(out):
    return json.loads((out / "manifest.json").read_text())


@pytest.fixture
def small_csv(tmp_path):
    path = tmp_path / "small.csv"
    write_csv(simulate(SimConfig(days=1, seed=2)), path)
    return path


class TestExitCodes:
    def test_no_arguments(self, capsys):
        assert run([]) == EXIT_USAGE

    def test_unknown_subcommand(self, capsys):
        assert run(["frobnicate"]) == EXIT_USAGE
        assert "invalid choice" in capsys.readouterr().err

    def test_bad_flag_value(self, tmp_path):
        assert run(["simulate", "--seed", "abc", "--out", str(tmp_path)]) == EXIT_USAGE

    def test_help(self, capsys):
        assert run(["--help"]) == EXIT_OK

    def test_missing_file(self, tmp_path, capsys):
        assert run(["label", str(tmp_path / "absent.csv"), "--out", str(tmp_path)]) == EXIT_DATA

    def test_unknown_config_key(self, tmp_path):
        cfg = tmp_path / "c.conf"
        cfg.write_text("colour=blue\n")
        assert run(["simulate", "--config", str(cfg), "--out", str(tmp_path)]) == EXIT_DATA


class TestSimulateAndLabel:
    def test_simulate_writes_dataset_and_manifest(self, tmp_path):
        cfg = tmp_path / "c.conf"
        cfg.write_text("days=1\n")
        assert run(["simulate", "--config", str(cfg), "--seed", "3", "--out", str(tmp_path)]) == 0
        ds = read_csv(tmp_path / "dataset.csv")
        assert len(ds) == 1440
        m = _manifest(tmp_path)
        assert m["command"] == "simulate"
        assert m["seeds"]["global"] == 3
        assert m["artifacts"] == {"dataset.csv": "dataset.csv"}
        assert str(cfg) in m["inputs"] and len(m["inputs"][str(cfg)]) == 64

    def test_label_counts(self, tmp_path):
        src = tmp_path / "in.csv"
        write_csv(Dataset([0, 1], [[1550, 300, 10, 85, 40], [1550, 700, 10, 85, 40]]), src)
        before = src.read_bytes()
        assert run(["label", str(src), "--out", str(tmp_path / "o")]) == 0
        ds = read_csv(tmp_path / "o" / "labeled.csv")
        assert ds.labels == ((), ("light_high",))
        report = json.loads((tmp_path / "o" / "label_report.json").read_text())
        assert report["fire_counts"]["light_high"] == 1
        assert src.read_bytes() == before

    def test_custom_rules(self, tmp_path):
        src = tmp_path / "in.csv"
        write_csv(Dataset([0], [[1550, 300, 10, 85, 40]]), src)
        rules = tmp_path / "rules.txt"
        rules.write_text("warm,temperature,above,80,potential\n")
        assert run(["label", str(src), "--rules", str(rules), "--out", str(tmp_path / "o")]) == 0
        assert read_csv(tmp_path / "o" / "labeled.csv").labels == (("warm",),)


class TestIngest:
    def test_merge_five_files(self, tmp_path):
        flags = []
        for j, sid in enumerate(FEATURES):
            path = tmp_path / f"{sid}.csv"
            lines = ["timestamp,value"]
            for minute in range(0, 30, 10 if sid == "temperature" else 1):
                lines.append(f"{format_asctime(27_000_000 + minute)},{10.0 * (j + 1)}")
            path.write_text("\n".join(lines) + "\n")
            flags += [f"--{sid.replace('_', '-')}", str(path)]
        out = tmp_path / "o"
        assert run(["ingest", *flags, "--out", str(out)]) == 0
        ds = read_csv(out / "dataset.csv")
        # temperature logs every 10 minutes; its last sample (minute 20) is not extended
        assert len(ds) == 21
        assert ds.values[0].tolist() == [10.0, 20.0, 30.0, 40.0, 50.0]
        assert len(_manifest(out)["inputs"]) == 5

    def test_malformed_row(self, tmp_path, capsys):
        flags = []
        for sid in FEATURES:
            path = tmp_path / f"{sid}.csv"
            path.write_text("timestamp,value\n2021-04-16T10:19:00Z,oops\n")
            flags += [f"--{sid.replace('_', '-')}", str(path)]
        assert run(["ingest", *flags, "--out", str(tmp_path)]) == EXIT_DATA
        assert "row 2" in capsys.readouterr().err


class TestInject:
    def test_inject_spikes(self, small_csv, tmp_path):
        out = tmp_path / "o"
        assert run(["inject", str(small_csv), "--count", "5", "--seed", "4", "--out", str(out)]) == 0
        ds = read_csv(out / "injected.csv")
        assert ds.anomaly_mask().sum() >= 5
        log_lines = (out / "injection_log.csv").read_text().splitlines()
        assert len(log_lines) == 6


class TestTrainDetect:
    def test_refuses_anomalies_without_scrub(self, tmp_path, capsys):
        src = tmp_path / "in.csv"
        vals = np.tile([1550.0, 300, 10, 85, 40], (40, 1))
        vals[5, 1] = 700.0
        write_csv(Dataset(np.arange(40), vals), src)
        assert run(["train", str(src), *FAST, "--out", str(tmp_path / "o")]) == EXIT_DATA
        assert "--scrub" in capsys.readouterr().err
        assert run(["train", str(src), "--scrub", *FAST, "--out", str(tmp_path / "o")]) == 0

    def test_train_then_detect(self, small_csv, tmp_path):
        out = tmp_path / "o"
        assert run(["train", str(small_csv), *FAST, "--out", str(out)]) == 0
        model = out / "model.json"
        assert json.loads(model.read_text())["threshold"]["k"] == 5
        det = tmp_path / "d"
        assert run(["detect", str(model), str(small_csv), "--out", str(det)]) == 0
        report = json.loads((det / "report.json").read_text())
        assert report["n_points"] == 1440
        assert (det / "plot_loss.csv").exists() and (det / "plot_reconstruction.csv").exists()
        ev = tmp_path / "e"
        assert run(["evaluate", str(model), str(small_csv), "--out", str(ev)]) == 0
        assert not (ev / "plot_loss.csv").exists()
        pl = tmp_path / "p"
        assert run(["export-plots", str(model), str(small_csv), "--out", str(pl)]) == 0
        assert not (pl / "report.json").exists()

    def test_detect_uncalibrated(self, small_csv, tmp_path, capsys):
        out = tmp_path / "o"
        assert run(["train", str(small_csv), *FAST, "--out", str(out)]) == 0
        d = json.loads((out / "model.json").read_text())
        d["threshold"] = None
        (out / "model.json").write_text(json.dumps(d))
        assert run(["detect", str(out / "model.json"), str(small_csv), "--out", str(out)]) == EXIT_DATA
        assert "model not calibrated" in capsys.readouterr().err


class TestPrecedence:
    def test_flag_over_file_over_env(self, tmp_path, monkeypatch):
        cfg = tmp_path / "c.conf"
        cfg.write_text("days=1\nseed=5\n")
        monkeypatch.setenv("GREENSENTRY_SEED", "9")
        out = tmp_path / "a"
        assert run(["simulate", "--config", str(cfg), "--out", str(out)]) == 0
        eff = _manifest(out)["effective_config"]
        assert eff["seed"] == {"value": 5, "source": "file"}
        out = tmp_path / "b"
        assert run(["simulate", "--config", str(cfg), "--seed", "2", "--out", str(out)]) == 0
        assert _manifest(out)["effective_config"]["seed"] == {"value": 2, "source": "flag"}
        out = tmp_path / "c"
        cfg.write_text("days=1\n")
        assert run(["simulate", "--config", str(cfg), "--out", str(out)]) == 0
        assert _manifest(out)["effective_config"]["seed"] == {"value": 9, "source": "env"}

    def test_profile_values(self, small_csv, tmp_path):
        out = tmp_path / "o"
        assert run(["train", str(small_csv), "--profile", "paper", "--node-size", "8",
                    "--epochs", "1", "--out", str(out)]) == 0
        eff = _manifest(out)["effective_config"]
        assert eff["optimizer"] == {"value": "sgd", "source": "profile"}
        assert eff["learning_rate"]["value"] == 1e-6
        assert eff["epochs"] == {"value": 1, "source": "flag"}
