"""Threshold calibration, classification, metrics and evaluation reports."""
from __future__ import annotations

import csv
import json
import math
import time
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from .autoencoder import (ModelConfig, Parameters, TrainConfig, init,
                          reconstruct, reconstruction_losses, train)
from .errors import DataError, NotCalibratedError
from .preprocess import ScalerParams, fit_minmax, inverse_transform, split_indices, transform
from .sensor_data import (FEATURES, Dataset, _text_reader, _text_writer, format_timestamp,
                          parse_timestamp)


@dataclass(frozen=True)
class Threshold:
    value: float
    k: int
    source_count: int

    def __post_init__(self):
        if not (math.isfinite(self.value) and self.value >= 0):
            raise DataError("threshold must be finite and >= 0")
        if not 1 <= self.k <= self.source_count:
            raise DataError("threshold needs 1 <= k <= source_count")

    def to_dict(self) -> dict:
        return {"value": self.value, "k": self.k, "source_count": self.source_count}

    @classmethod
    def from_dict(cls, d: dict) -> "Threshold":
        return cls(float(d["value"]), int(d["k"]), int(d["source_count"]))


def calibrate_threshold(val_losses, k: int = 5) -> Threshold:
    """Mean of the ``k`` largest validation losses.

    The mean is computed exactly with rationals and rounded once, so it
    does not depend on the order in which the top values are visited.
    """
    losses = np.asarray(val_losses, dtype=np.float64).reshape(-1)
    if k < 1:
        raise DataError("k must be >= 1")
    if losses.size < k:
        raise DataError(f"insufficient validation data: {losses.size} losses for k={k}")
    if not np.isfinite(losses).all():
        raise DataError("validation losses must be finite")
    top = np.sort(losses)[-k:]
    exact = sum((Fraction(float(v)) for v in top), Fraction(0)) / k
    return Threshold(float(exact), k, int(losses.size))


def classify(losses, threshold: Threshold) -> np.ndarray:
    """True (anomalous) where loss is strictly above the threshold."""
    return np.asarray(losses, dtype=np.float64).reshape(-1) > threshold.value


def prediction_labels(predictions) -> list:
    return ["anomalous" if p else "normal" for p in predictions]


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int = 0
    tn: int = 0
    fp: int = 0
    fn: int = 0

    @property
    def total(self) -> int:
        return self.tp + self.tn + self.fp + self.fn

    def to_dict(self) -> dict:
        return {"tp": self.tp, "tn": self.tn, "fp": self.fp, "fn": self.fn}


def confusion(predictions, labels) -> ConfusionMatrix:
    """Counts with anomalous as the positive class."""
    p = np.asarray(predictions, dtype=bool).reshape(-1)
    a = np.asarray(labels, dtype=bool).reshape(-1)
    if p.shape != a.shape:
        raise DataError(f"length mismatch: {p.size} predictions vs {a.size} labels")
    return ConfusionMatrix(tp=int(np.sum(p & a)), tn=int(np.sum(~p & ~a)),
                           fp=int(np.sum(p & ~a)), fn=int(np.sum(~p & a)))


@dataclass(frozen=True)
class Metrics:
    accuracy: float
    precision: float
    recall: float
    f1: float
    undefined: frozenset = field(default_factory=frozenset)

    def to_dict(self) -> dict:
        return {"accuracy": self.accuracy, "precision": self.precision, "recall": self.recall,
                "f1": self.f1, "undefined": sorted(self.undefined)}


def metrics(cm: ConfusionMatrix) -> Metrics:
    """Accuracy, precision, recall and F1; a zero denominator gives 0 and a flag."""
    if cm.total == 0:
        raise DataError("cannot compute metrics of an empty confusion matrix")
    undefined = set()

    def ratio(num, den, name):
        if den == 0:
            undefined.add(name)
            return 0.0
        return num / den

    accuracy = (cm.tp + cm.tn) / cm.total
    precision = ratio(cm.tp, cm.tp + cm.fp, "precision")
    recall = ratio(cm.tp, cm.tp + cm.fn, "recall")
    f1 = ratio(2 * precision * recall, precision + recall, "f1")
    return Metrics(accuracy, precision, recall, f1, frozenset(undefined))


# --------------------------------------------------------------------------
# persisted model

FORMAT_VERSION = 1


@dataclass
class ModelState:
    """Everything needed to score new data: network, scaler, threshold, configs."""

    model_config: ModelConfig
    params: Parameters
    scaler: ScalerParams
    train_config: TrainConfig
    threshold: Optional[Threshold] = None

    def to_dict(self) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "feature_order": list(FEATURES),
            "model_config": self.model_config.to_dict(),
            "train_config": self.train_config.to_dict(),
            "scaler": self.scaler.to_dict(),
            "threshold": None if self.threshold is None else self.threshold.to_dict(),
            "layers": [
                {"weight": w.tolist(), "bias": b.tolist()}
                for w, b in zip(self.params.weights, self.params.biases)
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), separators=(",", ":")) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "ModelState":
        version = d.get("format_version")
        if version != FORMAT_VERSION:
            raise DataError(f"unsupported model format_version {version!r}")
        mc = ModelConfig.from_dict(d["model_config"])
        layers = d["layers"]
        if len(layers) != mc.n_layers:
            raise DataError(f"model has {len(layers)} layers, config expects {mc.n_layers}")
        params = Parameters.from_layers(
            mc,
            [np.array(layer["weight"], dtype=np.float64) for layer in layers],
            [np.array(layer["bias"], dtype=np.float64) for layer in layers],
        )
        th = d.get("threshold")
        return cls(mc, params, ScalerParams.from_dict(d["scaler"]),
                   TrainConfig.from_dict(d["train_config"]),
                   None if th is None else Threshold.from_dict(th))

    @classmethod
    def from_json(cls, text: str) -> "ModelState":
        try:
            return cls.from_dict(json.loads(text))
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, DataError):
                raise
            raise DataError(f"malformed model file: {exc}") from None

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(self.to_json())

    @classmethod
    def load(cls, path) -> "ModelState":
        with open(path, encoding="utf-8") as fh:
            return cls.from_json(fh.read())

    def require_calibrated(self) -> Threshold:
        if self.threshold is None:
            raise NotCalibratedError()
        return self.threshold


def fit_model_state(train_rows, model_config: ModelConfig, train_config: TrainConfig,
                    split_ratio: float = 0.75, split_mode: str = "chronological",
                    k: int = 5, labels=None):
    """Split normal rows, fit the scaler on the train part, train, calibrate.

    Returns ``(ModelState, TrainReport)``.
    """
    X = np.asarray(train_rows, dtype=np.float64)
    if labels is not None and np.any(labels):
        raise DataError("training data contains labeled anomalies; scrub first")
    idx_train, idx_val = split_indices(X.shape[0], split_ratio, split_mode, train_config.seed)
    scaler = fit_minmax(X[idx_train])
    tr = transform(scaler, X[idx_train])
    va = transform(scaler, X[idx_val])
    params, report = train(init(model_config, train_config.seed), tr, va, train_config)
    threshold = calibrate_threshold(reconstruction_losses(params, va), k)
    return ModelState(model_config, params, scaler, train_config, threshold), report


# --------------------------------------------------------------------------
# evaluation

@dataclass
class EvaluationReport:
    losses: np.ndarray
    predictions: np.ndarray
    labels: np.ndarray
    confusion: ConfusionMatrix
    metrics: Metrics
    threshold: Threshold
    total_seconds: float
    per_point_seconds: float

    @property
    def mean_loss_anomalous(self) -> float:
        return float(self.losses[self.labels].mean()) if self.labels.any() else float("nan")

    @property
    def mean_loss_normal(self) -> float:
        return float(self.losses[~self.labels].mean()) if (~self.labels).any() else float("nan")

    def to_dict(self, timing: bool = True) -> dict:
        d = {
            "n_points": int(self.losses.size),
            "confusion": self.confusion.to_dict(),
            "metrics": self.metrics.to_dict(),
            "threshold": self.threshold.to_dict(),
            "mean_loss_anomalous": _json_float(self.mean_loss_anomalous),
            "mean_loss_normal": _json_float(self.mean_loss_normal),
        }
        if timing:
            d["timing"] = {"total_seconds": self.total_seconds,
                           "per_point_seconds": self.per_point_seconds}
        return d

    def to_json(self, timing: bool = True) -> str:
        return json.dumps(self.to_dict(timing), indent=2) + "\n"


def _json_float(v):
    return None if not math.isfinite(v) else v


def timed_detect(state: ModelState, dataset: Dataset) -> EvaluationReport:
    """Scale, reconstruct, threshold and score a labeled dataset, timing the scoring."""
    threshold = state.require_calibrated()
    if not dataset.is_labeled:
        raise DataError("dataset must be labeled for evaluation")
    if len(dataset) == 0:
        raise DataError("dataset is empty")
    truth = dataset.anomaly_mask()
    started = time.perf_counter()
    scaled = transform(state.scaler, dataset.values)
    losses = reconstruction_losses(state.params, scaled)
    predictions = classify(losses, threshold)
    elapsed = time.perf_counter() - started
    cm = confusion(predictions, truth)
    return EvaluationReport(losses, predictions, truth, cm, metrics(cm), threshold,
                            elapsed, elapsed / len(dataset))


def reconstruct_dataset(state: ModelState, dataset: Dataset) -> np.ndarray:
    """Reconstructed feature values in original units."""
    scaled = transform(state.scaler, dataset.values)
    return inverse_transform(state.scaler, reconstruct(state.params, scaled))


# --------------------------------------------------------------------------
# plot data

LOSS_HEADER = ("timestamp", "loss", "label", "threshold")


def export_plot_data(losses, labels, threshold: Threshold, timestamps, sink) -> None:
    """``timestamp,loss,label,threshold`` rows for a loss-over-time plot."""
    losses = np.asarray(losses, dtype=np.float64).reshape(-1)
    labels = np.asarray(labels, dtype=bool).reshape(-1)
    timestamps = np.asarray(timestamps).reshape(-1)
    if not losses.size == labels.size == timestamps.size:
        raise DataError("losses, labels and timestamps must be aligned")
    with _text_writer(sink) as fh:
        fh.write(",".join(LOSS_HEADER) + "\n")
        for t, loss_value, lab in zip(timestamps, losses, labels):
            fh.write(f"{format_timestamp(t)},{float(loss_value)!r},"
                     f"{'anomalous' if lab else 'normal'},{threshold.value!r}\n")


def read_plot_data(source):
    """Inverse of :func:`export_plot_data`: ``(timestamps, losses, labels, threshold)``."""
    ts, losses, labels, thresholds = [], [], [], []
    with _text_reader(source) as fh:
        for row in csv.DictReader(fh):
            ts.append(parse_timestamp(row["timestamp"]))
            losses.append(float(row["loss"]))
            labels.append(row["label"] == "anomalous")
            thresholds.append(float(row["threshold"]))
    return (np.array(ts, dtype=np.int64), np.array(losses), np.array(labels, dtype=bool),
            thresholds[0] if thresholds else None)


def export_reconstruction_data(timestamps, original, reconstructed, sink) -> None:
    """Original next to reconstructed values per feature, for an overlay plot."""
    original = np.atleast_2d(np.asarray(original, dtype=np.float64))
    reconstructed = np.atleast_2d(np.asarray(reconstructed, dtype=np.float64))
    timestamps = np.asarray(timestamps).reshape(-1)
    if original.shape != reconstructed.shape or original.shape[0] != timestamps.size:
        raise DataError("original, reconstructed and timestamps must be aligned")
    header = ["timestamp"]
    for f in FEATURES:
        header += [f, f"{f}_reconstructed"]
    with _text_writer(sink) as fh:
        fh.write(",".join(header) + "\n")
        for i, t in enumerate(timestamps):
            cells = [format_timestamp(t)]
            for j in range(len(FEATURES)):
                cells += [repr(float(original[i, j])), repr(float(reconstructed[i, j]))]
            fh.write(",".join(cells) + "\n")


# --------------------------------------------------------------------------
# estimator

class AutoencoderDetector(BaseEstimator):
    """Scaler + autoencoder + calibrated threshold as one estimator.

    ``fit`` expects normal rows only. ``predict`` returns a boolean array,
    True for anomalous, ``score_samples`` the reconstruction loss, and
    ``decision_function`` the loss minus the threshold.
    """

    def __init__(self, node_size=256, hidden_activation="relu", output_activation="sigmoid",
                 epochs=60, batch_size=8, learning_rate=1e-6, optimizer="adam",
                 split_ratio=0.75, split_mode="chronological", k=5, random_state=0):
        self.node_size = node_size
        self.hidden_activation = hidden_activation
        self.output_activation = output_activation
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.optimizer = optimizer
        self.split_ratio = split_ratio
        self.split_mode = split_mode
        self.k = k
        self.random_state = random_state

    def fit(self, X, y=None):
        """``y``, if given, is an anomaly mask and must be all False."""
        X = check_array(X, dtype=np.float64)
        mc = ModelConfig.from_node_size(self.node_size, X.shape[1],
                                        hidden_activation=self.hidden_activation,
                                        output_activation=self.output_activation)
        tc = TrainConfig(self.epochs, self.batch_size, self.learning_rate, self.optimizer,
                         seed=self.random_state)
        self.state_, self.train_report_ = fit_model_state(
            X, mc, tc, self.split_ratio, self.split_mode, self.k, labels=y)
        self.threshold_ = self.state_.threshold.value
        self.n_features_in_ = X.shape[1]
        return self

    @classmethod
    def from_state(cls, state: ModelState) -> "AutoencoderDetector":
        mc, tc = state.model_config, state.train_config
        obj = cls(node_size=mc.encoder_widths[0] if mc.encoder_widths else mc.bottleneck_width,
                  hidden_activation=mc.hidden_activation, output_activation=mc.output_activation,
                  epochs=tc.epochs, batch_size=tc.batch_size, learning_rate=tc.learning_rate,
                  optimizer=tc.optimizer, random_state=tc.seed)
        if state.threshold is not None:
            obj.k = state.threshold.k
        obj.state_ = state
        obj.threshold_ = None if state.threshold is None else state.threshold.value
        obj.n_features_in_ = mc.input_dim
        return obj

    def score_samples(self, X):
        check_is_fitted(self, "state_")
        X = check_array(X, dtype=np.float64)
        return reconstruction_losses(self.state_.params, transform(self.state_.scaler, X))

    def decision_function(self, X):
        return self.score_samples(X) - self.state_.require_calibrated().value

    def predict(self, X):
        check_is_fitted(self, "state_")
        return classify(self.score_samples(X), self.state_.require_calibrated())
