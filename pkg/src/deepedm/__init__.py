"""DeepEDM: delay embeddings plus learned kernel regression for time-series forecasting.

Everything runs on numpy with a small reverse-mode autodiff engine.
"""
from .dynamics import build_synthetic_suite, simulate
from .edm import RecallConfig, SimplexConfig, knn_recall, simplex_forecast, simplex_multivariate
from .embedding import delay_embed, delay_embed_array
from .harness import ExperimentConfig, load_csv, make_windows, run_experiment
from .model import DeepEDM, ModelConfig, model_forward, revin, revin_inverse
from .train import LossConfig, TrainConfig, composite_loss, train

__version__ = "0.1.0"

__all__ = [
    "DeepEDM", "ExperimentConfig", "LossConfig", "ModelConfig", "RecallConfig", "SimplexConfig",
    "TrainConfig", "build_synthetic_suite", "composite_loss", "delay_embed", "delay_embed_array",
    "knn_recall", "load_csv", "make_windows", "model_forward", "revin", "revin_inverse",
    "run_experiment", "simplex_forecast", "simplex_multivariate", "simulate", "train",
]
