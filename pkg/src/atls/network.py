"""Layer graph mixing analog and digital layers, with manual backprop.

Only weight matrices can live on analog tiles; biases, activations, attention
arithmetic and the softmax stay digital.
"""

from __future__ import annotations

import copy
import hashlib

import numpy as np

from .device import DeviceSpec
from .rng import as_rng, make_rng
from .tile import AnalogTile, UpdateMode

__all__ = [
    "DigitalLinear",
    "AnalogLinear",
    "Activation",
    "Patchify",
    "MeanPool",
    "AttentionBlock",
    "SoftmaxHead",
    "ModelGraph",
    "softmax",
    "cross_entropy",
    "replace_head",
    "convert_to_analog",
    "build_mlp",
    "build_tiny_attention_classifier",
]


def softmax(z, axis=-1):
    z = z - np.max(z, axis=axis, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=axis, keepdims=True)


def cross_entropy(logits, labels):
    """Mean negative log-likelihood and its gradient w.r.t. ``logits``."""
    logits = np.asarray(logits, dtype=float)
    labels = np.asarray(labels)
    n, k = logits.shape
    if labels.shape != (n,):
        raise ValueError(f"labels shape {labels.shape} does not match batch of {n}")
    if np.any(labels < 0) or np.any(labels >= k):
        raise ValueError(f"labels must lie in [0, {k})")
    z = logits - logits.max(axis=1, keepdims=True)
    log_p = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    loss = -log_p[np.arange(n), labels].mean()
    grad = np.exp(log_p)
    grad[np.arange(n), labels] -= 1.0
    return float(loss), grad / n


class Layer:
    def forward(self, x):
        raise NotImplementedError

    def backward(self, grad):
        raise NotImplementedError

    def params(self, prefix=""):
        return []

    def linears(self):
        return []

    def map_linears(self, fn):
        return self


class _LinearBase(Layer):
    is_analog = False

    def __init__(self, bias):
        self.bias = None if bias is None else np.asarray(bias, dtype=float)
        self.grad_w = None
        self.grad_b = None
        self.last_x = None
        self.last_delta = None

    @property
    def in_features(self):
        return self.shape[1]

    @property
    def out_features(self):
        return self.shape[0]

    def linears(self):
        return [self]

    def map_linears(self, fn):
        return fn(self)

    def _matvec(self, x):
        raise NotImplementedError

    def _rmatvec(self, g):
        raise NotImplementedError

    def forward(self, x):
        self.last_x = x.reshape(-1, x.shape[-1])
        y = self._matvec(x)
        if self.bias is not None:
            y = y + self.bias
        return y

    def backward(self, grad):
        g2 = grad.reshape(-1, grad.shape[-1])
        self.last_delta = g2
        if self.bias is not None:
            self.grad_b = g2.sum(axis=0)
        if not self.is_analog:
            self.grad_w = g2.T @ self.last_x
        return self._rmatvec(grad)

    def params(self, prefix=""):
        out = [(prefix + "weight", self.weight)]
        if self.bias is not None:
            out.append((prefix + "bias", self.bias))
        return out


class DigitalLinear(_LinearBase):
    """``y = x W^T + b`` with ``W`` of shape ``(out, in)``."""

    def __init__(self, weight, bias=None):
        super().__init__(bias)
        self.weight = np.asarray(weight, dtype=float)

    @classmethod
    def init(cls, n_in, n_out, rng, scale=1.0, bias=True):
        bound = scale / np.sqrt(n_in)
        w = rng.uniform(-bound, bound, size=(n_out, n_in))
        b = rng.uniform(-bound, bound, size=n_out) if bias else None
        return cls(w, b)

    @property
    def shape(self):
        return self.weight.shape

    def _matvec(self, x):
        return x @ self.weight.T

    def _rmatvec(self, g):
        return g @ self.weight


class AnalogLinear(_LinearBase):
    """Linear layer whose weight matrix is held by an :class:`AnalogTile`."""

    is_analog = True

    def __init__(self, tile: AnalogTile, bias=None, device_spec: DeviceSpec | None = None):
        super().__init__(bias)
        self.tile = tile
        self.device_spec = device_spec or DeviceSpec()

    @property
    def shape(self):
        return self.tile.shape

    @property
    def weight(self):
        return self.tile.weights

    def _matvec(self, x):
        return self.tile.forward(x)

    def _rmatvec(self, g):
        return self.tile.backward(g)


class Activation(Layer):
    KINDS = ("relu", "tanh", "sigmoid")

    def __init__(self, kind="relu"):
        if kind not in self.KINDS:
            raise ValueError(f"unknown activation {kind!r}")
        self.kind = kind
        self._out = None
        self._in = None

    def forward(self, x):
        self._in = x
        if self.kind == "relu":
            out = np.maximum(x, 0.0)
        elif self.kind == "tanh":
            out = np.tanh(x)
        else:
            out = 1.0 / (1.0 + np.exp(-x))
        self._out = out
        return out

    def backward(self, grad):
        if self.kind == "relu":
            return grad * (self._in > 0)
        if self.kind == "tanh":
            return grad * (1.0 - self._out**2)
        return grad * self._out * (1.0 - self._out)


class Patchify(Layer):
    """Split flat inputs ``(B, n * p)`` into a token sequence ``(B, n, p)``."""

    def __init__(self, n_patches, patch_dim):
        self.n_patches = n_patches
        self.patch_dim = patch_dim

    def forward(self, x):
        if x.shape[-1] != self.n_patches * self.patch_dim:
            raise ValueError(
                f"input width {x.shape[-1]} != {self.n_patches} patches x {self.patch_dim}"
            )
        return x.reshape(x.shape[0], self.n_patches, self.patch_dim)

    def backward(self, grad):
        return grad.reshape(grad.shape[0], -1)


class MeanPool(Layer):
    def forward(self, x):
        self._t = x.shape[1]
        return x.mean(axis=1)

    def backward(self, grad):
        return np.repeat(grad[:, None, :] / self._t, self._t, axis=1)


class AttentionBlock(Layer):
    """One multi-head self-attention sublayer plus a ReLU MLP, both residual."""

    SUBLAYERS = ("q", "k", "v", "proj", "fc1", "fc2")

    def __init__(self, q, k, v, proj, fc1, fc2, heads):
        self.q, self.k, self.v, self.proj, self.fc1, self.fc2 = q, k, v, proj, fc1, fc2
        self.heads = heads
        self.act = Activation("relu")
        dim = q.shape[0]
        if dim % heads:
            raise ValueError(f"embed dim {dim} not divisible by {heads} heads")

    @classmethod
    def init(cls, dim, heads, mlp_dim, rng):
        lin = [DigitalLinear.init(dim, dim, rng) for _ in range(4)]
        fc1 = DigitalLinear.init(dim, mlp_dim, rng)
        fc2 = DigitalLinear.init(mlp_dim, dim, rng)
        return cls(*lin, fc1, fc2, heads)

    def linears(self):
        return [getattr(self, name) for name in self.SUBLAYERS]

    def map_linears(self, fn):
        for name in self.SUBLAYERS:
            setattr(self, name, fn(getattr(self, name)))
        return self

    def params(self, prefix=""):
        out = []
        for name in self.SUBLAYERS:
            out += getattr(self, name).params(f"{prefix}{name}.")
        return out

    def _split(self, x):
        b, t, d = x.shape
        return x.reshape(b, t, self.heads, d // self.heads).transpose(0, 2, 1, 3)

    def _merge(self, x):
        b, h, t, dh = x.shape
        return x.transpose(0, 2, 1, 3).reshape(b, t, h * dh)

    def attention(self, x):
        q, k, v = self._split(self.q.forward(x)), self._split(self.k.forward(x)), self._split(self.v.forward(x))
        scale = 1.0 / np.sqrt(q.shape[-1])
        p = softmax(q @ k.transpose(0, 1, 3, 2) * scale)
        self._cache = (q, k, v, p, scale)
        return self.proj.forward(self._merge(p @ v))

    def forward(self, x):
        x1 = x + self.attention(x)
        return x1 + self.fc2.forward(self.act.forward(self.fc1.forward(x1)))

    def backward(self, grad):
        g1 = grad + self.fc1.backward(self.act.backward(self.fc2.backward(grad)))
        q, k, v, p, scale = self._cache
        d_o = self._split(self.proj.backward(g1))
        d_p = d_o @ v.transpose(0, 1, 3, 2)
        d_v = p.transpose(0, 1, 3, 2) @ d_o
        d_s = p * (d_p - np.sum(d_p * p, axis=-1, keepdims=True)) * scale
        d_q = d_s @ k
        d_k = d_s.transpose(0, 1, 3, 2) @ q
        return (
            g1
            + self.q.backward(self._merge(d_q))
            + self.k.backward(self._merge(d_k))
            + self.v.backward(self._merge(d_v))
        )


class SoftmaxHead(Layer):
    """Final linear map to class logits; the softmax itself lives in the loss."""

    def __init__(self, linear):
        self.linear = linear

    @property
    def class_count(self):
        return self.linear.shape[0]

    def forward(self, x):
        return self.linear.forward(x)

    def backward(self, grad):
        return self.linear.backward(grad)

    def linears(self):
        return [self.linear]

    def map_linears(self, fn):
        self.linear = fn(self.linear)
        return self

    def params(self, prefix=""):
        return self.linear.params(prefix)


class ModelGraph:
    """Ordered layers ending in exactly one :class:`SoftmaxHead`."""

    def __init__(self, layers, input_dim=None):
        layers = list(layers)
        heads = [i for i, layer in enumerate(layers) if isinstance(layer, SoftmaxHead)]
        if heads != [len(layers) - 1]:
            raise ValueError("model needs exactly one SoftmaxHead, as its last layer")
        self.layers = layers
        self.input_dim = input_dim

    @property
    def head(self) -> SoftmaxHead:
        return self.layers[-1]

    @property
    def class_count(self) -> int:
        return self.head.class_count

    def forward(self, x):
        x = np.asarray(x, dtype=float)
        if self.input_dim is not None and x.shape[-1] != self.input_dim:
            raise ValueError(f"expected {self.input_dim} input features, got {x.shape[-1]}")
        for layer in self.layers:
            x = layer.forward(x)
        return x

    __call__ = forward

    def backward(self, grad):
        for layer in reversed(self.layers):
            grad = layer.backward(grad)
        return grad

    def predict_proba(self, x):
        return softmax(self.forward(x))

    def linear_layers(self):
        out = []
        for layer in self.layers:
            out += layer.linears()
        return out

    def named_params(self):
        out = []
        for i, layer in enumerate(self.layers):
            out += layer.params(f"{i}.")
        return out

    @property
    def n_params(self) -> int:
        return sum(p.size for _, p in self.named_params())

    @property
    def is_analog(self) -> bool:
        return any(layer.is_analog for layer in self.linear_layers())

    def body_hash(self) -> str:
        """SHA-256 over every parameter outside the head."""
        h = hashlib.sha256()
        for layer in self.layers[:-1]:
            for name, p in layer.params():
                h.update(name.encode())
                h.update(np.ascontiguousarray(p, dtype="<f8").tobytes())
        return h.hexdigest()

    def copy(self) -> "ModelGraph":
        return copy.deepcopy(self)


def replace_head(model: ModelGraph, new_class_count: int, init_seed=0, scale=0.1) -> ModelGraph:
    """Copy of ``model`` with a freshly initialised digital head of ``new_class_count`` outputs."""
    if new_class_count < 2:
        raise ValueError("new_class_count must be >= 2")
    body = copy.deepcopy(model.layers[:-1])
    n_in = model.head.linear.shape[1]
    rng = as_rng(init_seed)
    head = SoftmaxHead(DigitalLinear.init(n_in, new_class_count, rng, scale=scale))
    return ModelGraph(body + [head], input_dim=model.input_dim)


def convert_to_analog(model: ModelGraph, device_spec: DeviceSpec, tau: float = 0.0, seed=0, *,
                      tau_relative: bool = False, update_mode: UpdateMode | None = None,
                      out_noise_std: float = 0.0, read_noise_std: float = 0.0) -> ModelGraph:
    """Copy of ``model`` with every digital weight programmed onto a fresh tile.

    Each tile is sampled from ``device_spec`` and programmed exactly once with
    transfer noise ``tau`` (scaled by that layer's weight std when
    ``tau_relative``). Biases stay digital.
    """
    if tau < 0:
        raise ValueError("tau must be >= 0")
    out = copy.deepcopy(model)
    counter = iter(range(10**9))

    def to_analog(layer):
        if layer.is_analog:
            return layer
        idx = next(counter)
        rows, cols = layer.shape
        tile = AnalogTile.from_spec(
            device_spec, rows, cols, seed=make_rng(_seed_int(seed), 0xC0, idx),
            out_noise_std=out_noise_std, read_noise_std=read_noise_std, update_mode=update_mode,
        )
        layer_tau = tau * float(np.std(layer.weight)) if tau_relative else tau
        tile.program_weights(layer.weight, layer_tau)
        return AnalogLinear(tile, None if layer.bias is None else layer.bias.copy(), device_spec)

    out.layers = [layer.map_linears(to_analog) for layer in out.layers]
    return out


def _seed_int(seed):
    if isinstance(seed, np.random.Generator):
        return int(seed.integers(2**63))
    return int(seed)


def build_mlp(dims, seed=0, activation="relu") -> ModelGraph:
    """``dims = [in, hidden..., classes]``; the last linear becomes the head."""
    dims = list(dims)
    if len(dims) < 2 or any(int(d) < 1 for d in dims) or dims[-1] < 2:
        raise ValueError(f"invalid MLP dims {dims}")
    rng = make_rng(int(seed), 0x31)
    layers: list[Layer] = []
    for n_in, n_out in zip(dims[:-2], dims[1:-1]):
        layers += [DigitalLinear.init(n_in, n_out, rng), Activation(activation)]
    layers.append(SoftmaxHead(DigitalLinear.init(dims[-2], dims[-1], rng)))
    return ModelGraph(layers, input_dim=dims[0])


def build_tiny_attention_classifier(patch_dim, embed_dim, heads, classes, seed=0,
                                    n_patches=4, mlp_dim=None) -> ModelGraph:
    """Patch embedding, one attention block, mean pooling and a softmax head."""
    if min(patch_dim, embed_dim, heads, n_patches) < 1 or classes < 2:
        raise ValueError("invalid attention classifier dimensions")
    if embed_dim % heads:
        raise ValueError(f"embed_dim {embed_dim} not divisible by heads {heads}")
    rng = make_rng(int(seed), 0xA7)
    layers = [
        Patchify(n_patches, patch_dim),
        DigitalLinear.init(patch_dim, embed_dim, rng),
        AttentionBlock.init(embed_dim, heads, mlp_dim or 2 * embed_dim, rng),
        MeanPool(),
        SoftmaxHead(DigitalLinear.init(embed_dim, classes, rng)),
    ]
    return ModelGraph(layers, input_dim=n_patches * patch_dim)
