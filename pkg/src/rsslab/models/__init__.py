"""Localization methods: kNN fingerprinting, kNN with interpolation, 1-D CNN."""
from .cnn import CnnModel, TrainConfig, cnn_backward, cnn_forward, init_cnn, loss_and_grads, train_cnn
from .knn import FingerprintDb, knn_interp_predict, knn_predict
from .metrics import EvalResult, evaluate

__all__ = [
    "CnnModel", "TrainConfig", "cnn_backward", "cnn_forward", "init_cnn", "loss_and_grads", "train_cnn",
    "FingerprintDb", "knn_interp_predict", "knn_predict", "EvalResult", "evaluate",
]
