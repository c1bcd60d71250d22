"""Small fully-connected building blocks over the autodiff tape."""

from __future__ import annotations

import numpy as np

from .autodiff import Tensor, param


class Linear:
    def __init__(self, din, dout, rng, scale=None):
        s = scale if scale is not None else 1.0 / np.sqrt(din)
        self.w = param(rng.uniform(-s, s, size=(din, dout)))
        self.b = param(np.zeros((1, dout)))

    def forward(self, tape, x, frozen=False):
        # frozen: evaluate with constant copies of the weights so gradients
        # flow through x but not into this layer's parameters
        if frozen:
            return tape.affine(x, Tensor(self.w.data), Tensor(self.b.data))
        return tape.affine(x, self.w, self.b)

    def forward_np(self, x):
        return x @ self.w.data + self.b.data


class MLP:
    """ReLU MLP: dims = [in, hidden..., out], linear output layer."""

    def __init__(self, dims, rng):
        self.dims = list(dims)
        self.layers = [Linear(a, b, rng) for a, b in zip(dims[:-1], dims[1:])]

    def forward(self, tape, x, frozen=False):
        for layer in self.layers[:-1]:
            x = tape.relu(layer.forward(tape, x, frozen=frozen))
        return self.layers[-1].forward(tape, x, frozen=frozen)

    def forward_np(self, x):
        for layer in self.layers[:-1]:
            x = np.maximum(layer.forward_np(x), 0.0)
        return self.layers[-1].forward_np(x)

    def named_params(self, prefix):
        out = {}
        for i, layer in enumerate(self.layers, start=1):
            out[f"{prefix}.w{i}"] = layer.w
            out[f"{prefix}.b{i}"] = layer.b
        return out
