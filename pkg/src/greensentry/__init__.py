"""Autoencoder anomaly detection for minute-resolution greenhouse sensor data."""
from .autoencoder import Autoencoder, ModelConfig, Parameters, TrainConfig
from .detect import AutoencoderDetector, ModelState, Threshold, calibrate_threshold, timed_detect
from .labeling import RuleSet, default_ruleset, inject, label, scrub
from .preprocess import MinMaxNormalizer, ScalerParams
from .sensor_data import FEATURES, Dataset, read_csv, write_csv
from .simulate import SimConfig, reference_scenario, simulate

__version__ = "0.1.0"

__all__ = [
    "Autoencoder", "AutoencoderDetector", "Dataset", "FEATURES", "MinMaxNormalizer",
    "ModelConfig", "ModelState", "Parameters", "RuleSet", "ScalerParams", "SimConfig",
    "Threshold", "TrainConfig", "calibrate_threshold", "default_ruleset", "inject", "label",
    "read_csv", "reference_scenario", "scrub", "simulate", "timed_detect", "write_csv",
]
