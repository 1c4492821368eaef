"""Minimal numpy-backed neural-network kit."""
from moda.nnkit.checkpoint import load_arrays, restore_params, save_arrays
from moda.nnkit.gradcheck import max_relative_error, numerical_gradients
from moda.nnkit.layers import (
    Conv2d,
    Dense,
    Flatten,
    GlobalAvgPool,
    Layer,
    Network,
    ReLU,
    Sigmoid,
)
from moda.nnkit.losses import bce, categorical_entropy, loss, mse, triplet_hinge
from moda.nnkit.ops import log_softmax, one_hot, sigmoid, softmax
from moda.nnkit.optim import Adam

__all__ = [
    "Adam",
    "Conv2d",
    "Dense",
    "Flatten",
    "GlobalAvgPool",
    "Layer",
    "Network",
    "ReLU",
    "Sigmoid",
    "bce",
    "categorical_entropy",
    "load_arrays",
    "log_softmax",
    "loss",
    "max_relative_error",
    "mse",
    "numerical_gradients",
    "one_hot",
    "restore_params",
    "save_arrays",
    "sigmoid",
    "softmax",
    "triplet_hinge",
]
