"""Min-max scaling fitted on training rows only, and train/validation splits."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .errors import DataError
from .sensor_data import FEATURES


@dataclass(frozen=True, eq=False)
class ScalerParams:
    data_min: np.ndarray
    data_max: np.ndarray

    def __post_init__(self):
        lo = np.array(self.data_min, dtype=np.float64).reshape(-1)
        hi = np.array(self.data_max, dtype=np.float64).reshape(-1)
        if lo.shape != hi.shape:
            raise DataError("min and max differ in length")
        if np.any(lo > hi):
            raise DataError("min must not exceed max")
        lo.flags.writeable = hi.flags.writeable = False
        object.__setattr__(self, "data_min", lo)
        object.__setattr__(self, "data_max", hi)

    def __eq__(self, other):
        if not isinstance(other, ScalerParams):
            return NotImplemented
        return np.array_equal(self.data_min, other.data_min) and np.array_equal(self.data_max, other.data_max)

    @property
    def degenerate(self) -> np.ndarray:
        return self.data_max == self.data_min

    def to_dict(self, feature_names=FEATURES) -> dict:
        names = list(feature_names)[: self.data_min.size]
        return {
            "features": names,
            "min": [float(v) for v in self.data_min],
            "max": [float(v) for v in self.data_max],
            "degenerate": [bool(v) for v in self.degenerate],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ScalerParams":
        return cls(np.array(d["min"], dtype=np.float64), np.array(d["max"], dtype=np.float64))


def _matrix(m):
    return check_array(m, dtype=np.float64, ensure_2d=True, ensure_min_samples=0)


def fit_minmax(train) -> ScalerParams:
    train = _matrix(train)
    if train.shape[0] == 0:
        raise DataError("cannot fit a scaler on an empty matrix")
    return ScalerParams(train.min(axis=0), train.max(axis=0))


def transform(params: ScalerParams, m) -> np.ndarray:
    """``(x - min) / (max - min)`` per column, not clipped; constant columns map to 0."""
    m = _matrix(m)
    span = params.data_max - params.data_min
    safe = np.where(params.degenerate, 1.0, span)
    out = (m - params.data_min) / safe
    out[:, params.degenerate] = 0.0
    return out


def inverse_transform(params: ScalerParams, m) -> np.ndarray:
    m = _matrix(m)
    span = params.data_max - params.data_min
    out = m * span + params.data_min
    out[:, params.degenerate] = params.data_min[params.degenerate]
    return out


def split(normal, ratio: float = 0.75, mode: str = "chronological", seed: int = 0):
    """Partition rows into ``(train, validation)``.

    Train receives ``floor(ratio * n)`` rows, clamped so both sides get at
    least one. Chronological mode keeps order and puts the most recent rows
    in validation; shuffled mode permutes with ``seed`` first.
    """
    idx_train, idx_val = split_indices(len(normal), ratio, mode, seed)
    normal = np.asarray(normal)
    return normal[idx_train], normal[idx_val]


def split_indices(n: int, ratio: float = 0.75, mode: str = "chronological", seed: int = 0):
    if not 0.0 < ratio < 1.0:
        raise DataError("split ratio must lie strictly between 0 and 1")
    if n < 2:
        raise DataError("need at least 2 rows to split")
    n_train = min(max(int(np.floor(ratio * n)), 1), n - 1)
    if mode == "chronological":
        order = np.arange(n)
    elif mode == "shuffled":
        order = np.random.default_rng(seed).permutation(n)
    else:
        raise DataError(f"unknown split mode {mode!r}")
    return order[:n_train], order[n_train:]


class MinMaxNormalizer(TransformerMixin, BaseEstimator):
    """Estimator wrapper around :func:`fit_minmax` / :func:`transform`.

    Unlike ``sklearn.preprocessing.MinMaxScaler`` there is no clipping
    option and constant columns map to 0 rather than to the lower range.
    """

    def fit(self, X, y=None):
        self.params_ = fit_minmax(X)
        self.n_features_in_ = self.params_.data_min.size
        return self

    def transform(self, X):
        check_is_fitted(self, "params_")
        return transform(self.params_, X)

    def inverse_transform(self, X):
        check_is_fitted(self, "params_")
        return inverse_transform(self.params_, X)

    @property
    def data_min_(self):
        return self.params_.data_min

    @property
    def data_max_(self):
        return self.params_.data_max

    @property
    def degenerate_(self):
        return self.params_.degenerate

    @classmethod
    def from_params(cls, params: ScalerParams) -> "MinMaxNormalizer":
        obj = cls()
        obj.params_ = params
        obj.n_features_in_ = params.data_min.size
        return obj
