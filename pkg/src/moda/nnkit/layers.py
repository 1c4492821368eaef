"""Layers and the sequential network container.

Everything is float64 numpy with a leading batch dimension.  Each layer
caches what its backward pass needs during forward; backward overwrites the
stored parameter gradients (one forward, one backward per step).
"""
from __future__ import annotations

import numpy as np

from moda import kernels
from moda.errors import ContractError, ShapeError


class Layer:
    def params(self) -> list[np.ndarray]:
        return []

    def grads(self) -> list[np.ndarray]:
        return []

    def param_names(self) -> list[str]:
        return []

    def forward(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def backward(self, dy: np.ndarray) -> np.ndarray:
        raise NotImplementedError


class Dense(Layer):
    """Affine map (N, in) -> (N, out); weights uniform in +-1/sqrt(in)."""

    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator):
        scale = 1.0 / np.sqrt(in_dim)
        self.weights = rng.uniform(-scale, scale, size=(out_dim, in_dim))
        self.bias = np.zeros(out_dim)
        self.dweights = np.zeros_like(self.weights)
        self.dbias = np.zeros_like(self.bias)
        self._x: np.ndarray | None = None

    def params(self):
        return [self.weights, self.bias]

    def grads(self):
        return [self.dweights, self.dbias]

    def param_names(self):
        return ["weights", "bias"]

    def forward(self, x):
        if x.ndim != 2 or x.shape[1] != self.weights.shape[1]:
            raise ShapeError(
                f"expected (N, {self.weights.shape[1]}), got {x.shape}"
            )
        self._x = x
        return x @ self.weights.T + self.bias

    def backward(self, dy):
        if self._x is None:
            raise ContractError("backward before forward")
        self.dweights[...] = dy.T @ self._x
        self.dbias[...] = dy.sum(axis=0)
        return dy @ self.weights


class Conv2d(Layer):
    """Stride-1 same-padding convolution (N,C,H,W) -> (N,O,H,W), odd kernel."""

    def __init__(self, in_ch: int, out_ch: int, ksize: int, rng: np.random.Generator):
        if ksize % 2 == 0 or ksize < 1:
            raise ShapeError(f"kernel size must be odd and positive, got {ksize}")
        fan_in = in_ch * ksize * ksize
        scale = 1.0 / np.sqrt(fan_in)
        self.kernels = rng.uniform(-scale, scale, size=(out_ch, in_ch, ksize, ksize))
        self.bias = np.zeros(out_ch)
        self.dkernels = np.zeros_like(self.kernels)
        self.dbias = np.zeros_like(self.bias)
        self._x: np.ndarray | None = None

    def params(self):
        return [self.kernels, self.bias]

    def grads(self):
        return [self.dkernels, self.dbias]

    def param_names(self):
        return ["kernels", "bias"]

    def forward(self, x):
        if x.ndim != 4 or x.shape[1] != self.kernels.shape[1]:
            raise ShapeError(
                f"expected (N, {self.kernels.shape[1]}, H, W), got {x.shape}"
            )
        self._x = x
        return kernels.conv2d_forward(x, self.kernels, self.bias)

    def backward(self, dy):
        if self._x is None:
            raise ContractError("backward before forward")
        dx, dw, db = kernels.conv2d_backward(self._x, self.kernels, dy)
        self.dkernels[...] = dw
        self.dbias[...] = db
        return dx


class ReLU(Layer):
    def __init__(self):
        self._mask: np.ndarray | None = None

    def forward(self, x):
        self._mask = x > 0
        return np.where(self._mask, x, 0.0)

    def backward(self, dy):
        if self._mask is None:
            raise ContractError("backward before forward")
        return np.where(self._mask, dy, 0.0)


class Sigmoid(Layer):
    def __init__(self):
        self._y: np.ndarray | None = None

    def forward(self, x):
        from moda.nnkit.ops import sigmoid

        self._y = sigmoid(x)
        return self._y

    def backward(self, dy):
        if self._y is None:
            raise ContractError("backward before forward")
        return dy * self._y * (1.0 - self._y)


class GlobalAvgPool(Layer):
    """(N,C,H,W) -> (N,C) by spatial mean."""

    def __init__(self):
        self._shape: tuple | None = None

    def forward(self, x):
        if x.ndim != 4:
            raise ShapeError(f"expected 4-d input, got {x.shape}")
        self._shape = x.shape
        return x.mean(axis=(2, 3))

    def backward(self, dy):
        if self._shape is None:
            raise ContractError("backward before forward")
        n, c, h, w = self._shape
        return np.broadcast_to(dy[:, :, None, None], self._shape) / (h * w)


class Flatten(Layer):
    def __init__(self):
        self._shape: tuple | None = None

    def forward(self, x):
        self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, dy):
        if self._shape is None:
            raise ContractError("backward before forward")
        return dy.reshape(self._shape)


class Network:
    """Sequential container; forward caches per layer, backward reverses."""

    def __init__(self, layers: list[Layer]):
        self.layers = list(layers)
        self._ran_forward = False

    def forward(self, x: np.ndarray) -> np.ndarray:
        for idx, layer in enumerate(self.layers):
            try:
                x = layer.forward(x)
            except ShapeError as e:
                raise ShapeError(f"layer {idx} ({type(layer).__name__}): {e}") from e
        self._ran_forward = True
        return x

    def backward(self, dy: np.ndarray) -> np.ndarray:
        if not self._ran_forward:
            raise ContractError("backward before forward")
        for layer in reversed(self.layers):
            dy = layer.backward(dy)
        return dy

    def params(self) -> list[np.ndarray]:
        return [p for layer in self.layers for p in layer.params()]

    def grads(self) -> list[np.ndarray]:
        return [g for layer in self.layers for g in layer.grads()]

    def param_names(self) -> list[str]:
        return [
            f"layer{idx}.{name}"
            for idx, layer in enumerate(self.layers)
            for name in layer.param_names()
        ]
