"""A small float64 dense-network engine with hand-written gradients and Adam.

Layers act on point sets row-wise (one shared affine map per point), which
is the kernel-size-1 convolution used by point networks.
"""

from __future__ import annotations

import contextlib
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

BLOCK_DIMS = (3, 64, 128, 256, 512)
HEAD_DIMS = (512, 256, 64, 1)
FEATURE_DIM = sum(BLOCK_DIMS[1:])  # 960

WEIGHTS_MAGIC = b"GQAN"
WEIGHTS_VERSION = 1


class NonFiniteGradientError(FloatingPointError):
    pass


@contextlib.contextmanager
def deterministic():
    """Single-threaded BLAS so reductions run in a fixed order."""
    with threadpool_limits(limits=1):
        yield


@dataclass
class DenseLayer:
    weight: np.ndarray  # (out, in)
    bias: np.ndarray    # (out,)

    @property
    def n_in(self):
        return self.weight.shape[1]

    @property
    def n_out(self):
        return self.weight.shape[0]

    @classmethod
    def init(cls, n_in, n_out, rng):
        bound = 1.0 / np.sqrt(n_in)
        return cls(rng.uniform(-bound, bound, size=(n_out, n_in)), rng.uniform(-bound, bound, size=n_out))

    @classmethod
    def zeros(cls, n_in, n_out):
        return cls(np.zeros((n_out, n_in)), np.zeros(n_out))

    def copy(self):
        return DenseLayer(self.weight.copy(), self.bias.copy())


def dense_forward(layer, x):
    """Row-wise affine map ``x @ W.T + b`` for ``x`` of shape (..., in)."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != layer.n_in:
        raise ValueError(f"input has {x.shape[-1]} columns, layer expects {layer.n_in}")
    out = x.reshape(-1, layer.n_in) @ layer.weight.T + layer.bias
    return out.reshape(x.shape[:-1] + (layer.n_out,))


def dense_backward(layer, x, grad_out):
    """Gradients of a dense layer; returns ``(grad_input, grad_weight, grad_bias)``."""
    x2 = x.reshape(-1, layer.n_in)
    g2 = grad_out.reshape(-1, layer.n_out)
    grad_w = g2.T @ x2
    grad_b = g2.sum(axis=0)
    grad_x = (g2 @ layer.weight).reshape(x.shape)
    return grad_x, grad_w, grad_b


def relu(x):
    return np.maximum(x, 0.0)


def sigmoid(x):
    """Logistic function, evaluated without overflow for large |x|."""
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out if out.ndim else float(out)


def maxpool_points(features):
    """Column-wise max over the point axis (-2) with the lowest-index argmax.

    Works on (n, d) or batched (b, n, d) arrays.
    """
    features = np.asarray(features)
    if features.shape[-2] == 0:
        raise ValueError("cannot max-pool an empty point set")
    arg = np.argmax(features, axis=-2)
    pooled = np.take_along_axis(features, arg[..., None, :], axis=-2)[..., 0, :]
    return pooled, arg


def maxpool_backward(grad_pooled, argmax, n_points):
    """Route pooled gradients to the argmax rows; all other rows get zero."""
    lead = grad_pooled.shape[:-1]
    d = grad_pooled.shape[-1]
    out = np.zeros(lead + (n_points, d))
    np.put_along_axis(out, argmax[..., None, :], grad_pooled[..., None, :], axis=-2)
    return out


def head_input_dim(block_subset):
    return sum(BLOCK_DIMS[b] for b in block_subset)


def subset_from_head_dim(dim):
    # block widths are distinct multiples of 64 in powers of two, so subset sums are unique
    for mask in range(1, 16):
        subset = tuple(b for b in (1, 2, 3, 4) if mask & (1 << (b - 1)))
        if head_input_dim(subset) == dim:
            return subset
    raise ValueError(f"no block subset has feature width {dim}")


class ModelParams:
    """Weights of the four shared point blocks and the score and weight heads."""

    def __init__(self, blocks, head_s, head_w):
        if len(blocks) != 4:
            raise ValueError("expected 4 feature blocks")
        for i, layer in enumerate(blocks):
            if (layer.n_in, layer.n_out) != (BLOCK_DIMS[i], BLOCK_DIMS[i + 1]):
                raise ValueError(f"block {i + 1} has shape {layer.weight.shape}")
        in_dim = head_s[0].n_in
        self.block_subset = subset_from_head_dim(in_dim)
        dims = (in_dim,) + HEAD_DIMS
        for head in (head_s, head_w):
            if len(head) != len(HEAD_DIMS):
                raise ValueError("heads need 4 dense layers")
            for i, layer in enumerate(head):
                if (layer.n_in, layer.n_out) != (dims[i], dims[i + 1]):
                    raise ValueError(f"head layer {i} has shape {layer.weight.shape}")
        self.blocks = list(blocks)
        self.head_s = list(head_s)
        self.head_w = list(head_w)

    @classmethod
    def init(cls, seed=0, block_subset=(1, 2, 3, 4)):
        """Fan-in uniform initialisation, fully determined by ``seed``."""
        rng = np.random.default_rng(seed)
        blocks = [DenseLayer.init(BLOCK_DIMS[i], BLOCK_DIMS[i + 1], rng) for i in range(4)]
        dims = (head_input_dim(tuple(sorted(block_subset))),) + HEAD_DIMS
        head_s = [DenseLayer.init(dims[i], dims[i + 1], rng) for i in range(4)]
        head_w = [DenseLayer.init(dims[i], dims[i + 1], rng) for i in range(4)]
        return cls(blocks, head_s, head_w)

    def layers(self):
        """``(name, layer)`` in storage order."""
        named = [(f"block{i + 1}", l) for i, l in enumerate(self.blocks)]
        named += [(f"head_s{i + 1}", l) for i, l in enumerate(self.head_s)]
        named += [(f"head_w{i + 1}", l) for i, l in enumerate(self.head_w)]
        return named

    def zeros_like(self):
        z = lambda l: DenseLayer.zeros(l.n_in, l.n_out)  # noqa: E731
        return ModelParams([z(l) for l in self.blocks], [z(l) for l in self.head_s], [z(l) for l in self.head_w])

    def copy(self):
        return ModelParams([l.copy() for l in self.blocks], [l.copy() for l in self.head_s],
                           [l.copy() for l in self.head_w])

    def arrays(self):
        for _, layer in self.layers():
            yield layer.weight
            yield layer.bias

    def n_parameters(self):
        return sum(a.size for a in self.arrays())

    def add_(self, other, scale=1.0):
        for a, b in zip(self.arrays(), other.arrays()):
            a += scale * b
        return self

    def scale_(self, factor):
        for a in self.arrays():
            a *= factor
        return self

    def equals(self, other):
        return all(np.array_equal(a, b) for a, b in zip(self.arrays(), other.arrays()))

    def to_bytes(self):
        chunks = [WEIGHTS_MAGIC, struct.pack("<II", WEIGHTS_VERSION, len(self.layers()))]
        for _, layer in self.layers():
            chunks.append(struct.pack("<II", layer.n_out, layer.n_in))
            chunks.append(np.ascontiguousarray(layer.weight, dtype="<f8").tobytes())
            chunks.append(np.ascontiguousarray(layer.bias, dtype="<f8").tobytes())
        return b"".join(chunks)

    @classmethod
    def from_bytes(cls, data):
        if data[:4] != WEIGHTS_MAGIC:
            raise ValueError("not a GQAN weights file")
        version, count = struct.unpack_from("<II", data, 4)
        if version != WEIGHTS_VERSION:
            raise ValueError(f"unsupported weights version {version}")
        if count != 12:
            raise ValueError(f"expected 12 layers, found {count}")
        off = 12
        layers = []
        for _ in range(count):
            rows, cols = struct.unpack_from("<II", data, off)
            off += 8
            w = np.frombuffer(data, dtype="<f8", count=rows * cols, offset=off).reshape(rows, cols)
            off += 8 * rows * cols
            b = np.frombuffer(data, dtype="<f8", count=rows, offset=off)
            off += 8 * rows
            layers.append(DenseLayer(w.astype(np.float64), b.astype(np.float64)))
        if off != len(data):
            raise ValueError("trailing bytes in weights file")
        return cls(layers[:4], layers[4:8], layers[8:12])

    def save(self, path):
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path):
        return cls.from_bytes(Path(path).read_bytes())


class Adam:
    """Adam with bias correction; the learning rate is set from outside per epoch."""

    def __init__(self, params, lr=1e-5, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = params.zeros_like()
        self.v = params.zeros_like()

    def step(self, params, grads):
        for (name, g_layer) in grads.layers():
            if not (np.all(np.isfinite(g_layer.weight)) and np.all(np.isfinite(g_layer.bias))):
                raise NonFiniteGradientError(f"non-finite gradient in parameter block {name!r}")
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for p, g, m, v in zip(params.arrays(), grads.arrays(), self.m.arrays(), self.v.arrays()):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


def step_lr(epoch, initial_lr, period=2, factor=0.5):
    """Learning rate for a 0-based ``epoch`` under step decay."""
    return initial_lr * factor ** (epoch // period)
