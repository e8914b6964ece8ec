"""Acceptance gate: one test per criterion, summarized at the end of the run."""
import json
import time
from fractions import Fraction

import numpy as np

from greensentry.autoencoder import ModelConfig, TrainConfig, gradients
from greensentry.config import PROFILES
from greensentry.detect import (
    ConfusionMatrix, ModelState, calibrate_threshold, confusion, fit_model_state, metrics,
    timed_detect,
)
from greensentry.labeling import InjectionLog, default_ruleset, injected_mask, label
from greensentry.preprocess import ScalerParams, fit_minmax, inverse_transform, transform
from greensentry.sensor_data import FEATURES, read_csv
from oracles import fd_gradients, max_relative_error, naive_labels, random_dataset, toy_network

ACTIVATIONS = [(h, o) for h in ("relu", "tanh") for o in ("sigmoid", "linear")]


def test_1_gradient_correctness(criterion):
    with criterion(1, "gradient correctness vs central differences") as c:
        started = time.perf_counter()
        worst, n = 0.0, 0
        for seed in range(10):
            for hidden, output in ACTIVATIONS:
                params, x = toy_network(1000 + seed, hidden, output)
                assert max(params.config.layer_sizes) <= 8
                err = max_relative_error(gradients(params, x).flat, fd_gradients(params, x, h=1e-5))
                worst, n = max(worst, err), n + 1
        elapsed = time.perf_counter() - started
        c.detail = f"{n} configs, worst relative error {worst:.2e}, {elapsed:.1f} s"
        assert n >= 20
        assert worst < 1e-4
        assert elapsed < 30


def test_2_oracle_equivalence(criterion):
    with criterion(2, "oracle equivalence (labels, threshold, metrics)") as c:
        rng = np.random.default_rng(2)
        rules = default_ruleset()
        ds = random_dataset(rng, 1000)
        labeled, _ = label(ds, rules)
        assert labeled.labels == naive_labels(ds.timestamps, ds.values.tolist(), rules)

        for _ in range(1000):
            losses = rng.exponential(size=int(rng.integers(5, 400))) * 10.0 ** rng.integers(-6, 3)
            top = sorted(losses.tolist())[-5:]
            assert calibrate_threshold(losses, 5).value == float(sum(map(Fraction, top)) / 5)

        for _ in range(200):
            n = int(rng.integers(1, 300))
            pred, truth = rng.random(n) < 0.3, rng.random(n) < 0.1
            cm = confusion(pred, truth)
            pairs = list(zip(pred.tolist(), truth.tolist()))
            assert (cm.tp, cm.tn, cm.fp, cm.fn) == (
                sum(p and a for p, a in pairs), sum(not p and not a for p, a in pairs),
                sum(p and not a for p, a in pairs), sum(a and not p for p, a in pairs))

        m = metrics(ConfusionMatrix(tp=8, fp=2, fn=1, tn=89))
        assert m.accuracy == 0.97 and m.precision == 0.8 and m.recall == 8 / 9
        p, r = Fraction(8, 10), Fraction(8, 9)
        assert abs(m.f1 - float(2 * p * r / (p + r))) <= 1e-15
        c.detail = "1000 records, 1000 loss vectors, 200 confusion draws, worked example"


def test_3_scaler_properties(criterion):
    with criterion(3, "scaler properties") as c:
        rng = np.random.default_rng(3)
        worst = 0.0
        for _ in range(200):
            train = rng.uniform(-1e3, 1e4, size=(int(rng.integers(2, 100)), 5))
            p = fit_minmax(train)
            out = transform(p, train)
            assert out.min(axis=0).tolist() == [0.0] * 5
            assert out.max(axis=0).tolist() == [1.0] * 5
            other = rng.uniform(-2e4, 2e4, size=(50, 5))
            back = inverse_transform(p, transform(p, other))
            worst = max(worst, float(np.max(np.abs(back - other) / np.maximum(np.abs(other), 1.0))))
        assert worst <= 1e-9
        assert transform(ScalerParams([1100.0], [2000.0]), [[1550.0]])[0, 0] == 0.5
        c.detail = f"worst inverse relative error {worst:.1e}"


def _without_timing(path):
    d = json.loads(path.read_text())
    d.pop("timing", None)
    d.pop("wall_time_seconds", None)
    return d


def test_4_determinism(criterion, reproduce_dirs):
    with criterion(4, "reproduce --seed 7 determinism") as c:
        a, b = reproduce_dirs
        exact = ["train.csv", "test.csv", "injection_log.csv", "simulation.conf", "model.json",
                 "plot_loss.csv", "plot_reconstruction.csv", "manifest.json"]
        for name in exact:
            assert (a / name).read_bytes() == (b / name).read_bytes(), name
        for name in ("report.json", "train_report.json"):
            assert _without_timing(a / name) == _without_timing(b / name), name
        c.detail = f"{len(exact) + 2} artifacts identical"


def test_5_detection_quality(criterion, reproduce_dirs):
    with criterion(5, "reference scenario detection quality") as c:
        report = json.loads((reproduce_dirs[0] / "report.json").read_text())
        m = report["metrics"]
        c.detail = (f"accuracy {m['accuracy']:.4f}, recall {m['recall']:.4f}, f1 {m['f1']:.4f}, "
                    f"loss anomalous {report['mean_loss_anomalous']:.3g} vs normal "
                    f"{report['mean_loss_normal']:.3g}")
        assert m["accuracy"] >= 0.95
        assert m["recall"] >= 0.90
        assert m["f1"] >= 0.90
        assert report["mean_loss_anomalous"] > report["mean_loss_normal"]


_LITERAL_RUN = {}


def _literal_run(reference):
    if not _LITERAL_RUN:
        p = PROFILES["paper"]
        tc = TrainConfig(p["epochs"], p["batch_size"], p["learning_rate"], p["optimizer"], seed=7)
        started = time.perf_counter()
        state, report = fit_model_state(reference.train.values, ModelConfig(), tc)
        _LITERAL_RUN.update(state=state, report=report, seconds=time.perf_counter() - started)
    return _LITERAL_RUN


def test_6_performance_envelope(criterion, reference, reproduce_dirs):
    with criterion(6, "performance envelope") as c:
        run = _literal_run(reference)
        state = ModelState.load(reproduce_dirs[0] / "model.json")
        ev = timed_detect(state, read_csv(reproduce_dirs[0] / "test.csv"))
        c.detail = (f"train {run['seconds']:.1f} s on {len(reference.train)} rows, "
                    f"detect {ev.total_seconds:.3f} s, {ev.per_point_seconds * 1e6:.1f} us/point")
        assert len(reference.train) >= 12000
        assert run["seconds"] <= 300
        assert ev.total_seconds <= 1.0
        assert ev.per_point_seconds <= 1e-3


def test_7_literal_profile(criterion, reference):
    with criterion(7, "literal profile sanity (60 epochs, batch 8, lr 1e-6, sgd)") as c:
        report = _literal_run(reference)["report"]
        c.detail = f"final train loss {report.train_loss[-1]:.4g}, val loss {report.val_loss[-1]:.4g}"
        assert len(report.train_loss) == len(report.val_loss) == 60
        assert np.all(np.isfinite(report.train_loss)) and np.all(np.isfinite(report.val_loss))
        assert min(report.train_loss) >= 0 and min(report.val_loss) >= 0


def test_8_injection_coverage(criterion, reproduce_dirs):
    with criterion(8, "injected spike coverage per feature") as c:
        out = reproduce_dirs[0]
        test = read_csv(out / "test.csv")
        log = InjectionLog.read_csv(out / "injection_log.csv")
        spikes = InjectionLog(e for e in log if e.kind == "spike")
        ev = timed_detect(ModelState.load(out / "model.json"), test)
        relabeled, _ = label(test, default_ruleset())
        recalls = {}
        for feature in FEATURES:
            mask = injected_mask(test, spikes, feature)
            assert mask.any(), feature
            assert relabeled.anomaly_mask()[mask].all(), feature
            recalls[feature] = float(ev.predictions[mask].mean())
        c.detail = ", ".join(f"{f} {r:.2f}" for f, r in recalls.items())
        assert min(recalls.values()) >= 0.8
