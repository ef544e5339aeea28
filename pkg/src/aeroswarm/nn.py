"""Small numpy MLP with hand-written backprop, and Adam."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class NonFiniteError(FloatingPointError):
    pass


@dataclass
class MlpParams:
    """Weights ``W[l]`` shaped (in, out); tanh on hidden layers, identity output."""
    weights: list
    biases: list

    @property
    def dims(self) -> list[int]:
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    def arrays(self) -> list[np.ndarray]:
        """Flat list in a fixed order: W0, b0, W1, b1, ..."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def copy(self) -> "MlpParams":
        return MlpParams([w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def check_finite(self) -> None:
        for a in self.arrays():
            if not np.all(np.isfinite(a)):
                raise NonFiniteError("non-finite value in network parameters")

    @classmethod
    def from_arrays(cls, arrays) -> "MlpParams":
        return cls(list(arrays[0::2]), list(arrays[1::2]))


def orthogonal(shape, gain: float, rng: np.random.Generator) -> np.ndarray:
    a = rng.standard_normal((max(shape), min(shape)))
    q, r = np.linalg.qr(a)
    q *= np.sign(np.diag(r))
    if shape[0] < shape[1]:
        q = q.T
    return gain * q[:shape[0], :shape[1]]


def init_mlp(dims, rng: np.random.Generator, out_gain: float = 1.0) -> MlpParams:
    weights, biases = [], []
    for i, (a, b) in enumerate(zip(dims[:-1], dims[1:])):
        gain = out_gain if i == len(dims) - 2 else np.sqrt(2.0)
        weights.append(orthogonal((a, b), gain, rng))
        biases.append(np.zeros(b))
    return MlpParams(weights, biases)


def forward(params: MlpParams, x: np.ndarray):
    """Returns (output, cache of layer activations)."""
    acts = [x]
    h = x
    last = len(params.weights) - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        h = h @ w + b
        if i < last:
            h = np.tanh(h)
        acts.append(h)
    return h, acts


def backward(params: MlpParams, acts: list, grad_out: np.ndarray) -> MlpParams:
    """Gradient of a scalar loss w.r.t. parameters, given dLoss/dOutput."""
    n_layers = len(params.weights)
    gw, gb = [None] * n_layers, [None] * n_layers
    g = grad_out
    for i in reversed(range(n_layers)):
        gw[i] = acts[i].T @ g
        gb[i] = g.sum(axis=0)
        if i > 0:
            g = (g @ params.weights[i].T) * (1.0 - acts[i] ** 2)
    return MlpParams(gw, gb)


def global_norm(grads: MlpParams) -> float:
    return float(np.sqrt(sum(float(np.sum(a * a)) for a in grads.arrays())))


def clip_by_global_norm(grads: MlpParams, max_norm: float) -> tuple[MlpParams, float]:
    norm = global_norm(grads)
    if max_norm > 0 and norm > max_norm:
        scale = max_norm / (norm + 1e-12)
        grads = MlpParams([w * scale for w in grads.weights], [b * scale for b in grads.biases])
    return grads, norm


@dataclass
class AdamState:
    m: list
    v: list
    t: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params: MlpParams, lr: float) -> "AdamState":
        arrays = params.arrays()
        return cls([np.zeros_like(a) for a in arrays], [np.zeros_like(a) for a in arrays], 0, lr)

    def step(self, params: MlpParams, grads: MlpParams) -> MlpParams:
        """Gradient-descent step; returns new parameters."""
        self.t += 1
        out = []
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for k, (p, g) in enumerate(zip(params.arrays(), grads.arrays())):
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * g * g
            mhat = self.m[k] / bc1
            vhat = self.v[k] / bc2
            out.append(p - self.lr * mhat / (np.sqrt(vhat) + self.eps))
        return MlpParams.from_arrays(out)
