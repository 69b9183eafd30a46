"""Small reference classifiers, momentum SGD and learning-rate schedules."""
from __future__ import annotations

from contextlib import contextmanager

import numpy as np

from . import tensor as T
from .errors import ConfigError, DimensionError
from .rng import as_rng

MODEL_KINDS = ("mlp", "cnn")


class Affine:
    def __init__(self, weight, bias):
        self.weight = weight
        self.bias = bias

    def params(self):
        return [self.weight, self.bias]

    def __call__(self, x):
        return T.add(T.matmul(x, self.weight), self.bias)


class Conv3:
    def __init__(self, weight, bias):
        self.weight = weight
        self.bias = bias

    def params(self):
        return [self.weight, self.bias]

    def __call__(self, x):
        return T.conv2d(x, self.weight, self.bias)


class ReLU:
    def params(self):
        return []

    def __call__(self, x):
        return T.relu(x)


class Reshape:
    def __init__(self, shape):
        self.shape = shape

    def params(self):
        return []

    def __call__(self, x):
        return T.reshape(x, (x.shape[0],) + tuple(self.shape))


class Classifier:
    """Feed-forward classifier mapping ``[B, D]`` inputs in [0, 1] to ``[B, C]`` logits."""

    def __init__(self, kind, dims, layers, input_dim, class_count):
        self.kind = kind
        self.dims = tuple(int(d) for d in dims)
        self.layers = layers
        self.input_dim = int(input_dim)
        self.class_count = int(class_count)

    def parameters(self):
        seen, out = set(), []
        for layer in self.layers:
            for p in layer.params():
                if id(p) in seen:
                    continue
                seen.add(id(p))
                out.append(p)
        return out

    @property
    def dtype(self):
        return self.parameters()[0].dtype

    @property
    def parameter_count(self):
        return int(sum(p.value.size for p in self.parameters()))

    def forward(self, x) -> T.Node:
        x = T.as_node(x)
        if x.value.ndim != 2 or x.shape[1] != self.input_dim:
            raise DimensionError(f"expected input [B, {self.input_dim}], got {x.shape}")
        for layer in self.layers:
            x = layer(x)
        return x

    __call__ = forward

    def logits(self, x) -> np.ndarray:
        with self.frozen():
            return self.forward(np.asarray(x, dtype=self.dtype)).value

    @contextmanager
    def frozen(self):
        """Temporarily stop tracking parameter gradients (input-gradient-only passes)."""
        params = self.parameters()
        flags = [p.requires_grad for p in params]
        for p in params:
            p.requires_grad = False
        try:
            yield self
        finally:
            for p, f in zip(params, flags):
                p.requires_grad = f

    def get_weights(self):
        return [p.value.copy() for p in self.parameters()]

    def set_weights(self, arrays):
        params = self.parameters()
        if len(arrays) != len(params):
            raise DimensionError(f"expected {len(params)} arrays, got {len(arrays)}")
        for p, a in zip(params, arrays):
            a = np.asarray(a)
            if a.shape != p.shape:
                raise DimensionError(f"weight shape {a.shape} != {p.shape}")
            p.value = a.astype(p.dtype, copy=True)


def _kaiming_uniform(gen, fan_in, shape, dtype):
    bound = np.sqrt(6.0 / fan_in)  # relu gain sqrt(2) -> var 2/fan_in
    return gen.uniform(-bound, bound, size=shape).astype(dtype)


def _mlp(dims, gen, dtype):
    if len(dims) < 2:
        raise ConfigError("mlp dims need at least input and output sizes")
    layers = []
    for i, (fan_in, fan_out) in enumerate(zip(dims[:-1], dims[1:])):
        w = T.parameter(_kaiming_uniform(gen, fan_in, (fan_in, fan_out), dtype), name=f"fc{i}.weight")
        b = T.parameter(np.zeros(fan_out, dtype=dtype), name=f"fc{i}.bias")
        layers.append(Affine(w, b))
        if i < len(dims) - 2:
            layers.append(ReLU())
    return Classifier("mlp", dims, layers, dims[0], dims[-1])


def _cnn(dims, gen, dtype):
    # dims = (height, width, classes[, ch1, ch2])
    if len(dims) not in (3, 5):
        raise ConfigError("cnn dims are (height, width, classes[, ch1, ch2])")
    h, w, c = dims[:3]
    ch1, ch2 = dims[3:] if len(dims) == 5 else (8, 16)
    if h < 5 or w < 5:
        raise ConfigError("cnn needs inputs of at least 5x5")
    layers = [Reshape((1, h, w))]
    cin = 1
    for i, cout in enumerate((ch1, ch2)):
        fan_in = cin * 9
        wt = T.parameter(_kaiming_uniform(gen, fan_in, (cout, cin, 3, 3), dtype), name=f"conv{i}.weight")
        bs = T.parameter(np.zeros(cout, dtype=dtype), name=f"conv{i}.bias")
        layers += [Conv3(wt, bs), ReLU()]
        cin = cout
    flat = ch2 * (h - 4) * (w - 4)
    layers.append(Reshape((flat,)))
    wt = T.parameter(_kaiming_uniform(gen, flat, (flat, c), dtype), name="fc.weight")
    bs = T.parameter(np.zeros(c, dtype=dtype), name="fc.bias")
    layers.append(Affine(wt, bs))
    return Classifier("cnn", (h, w, c, ch1, ch2), layers, h * w, c)


def init(model_kind, dims, rng, dtype=T.DEFAULT_DTYPE) -> Classifier:
    """Build a classifier with Kaiming-uniform weights and zero biases.

    ``mlp``: dims = [D, hidden..., C]. ``cnn``: dims = (height, width, C).
    """
    gen = as_rng(rng).child("init", model_kind).generator()
    dims = [int(d) for d in dims]
    if any(d <= 0 for d in dims):
        raise ConfigError(f"dims must be positive, got {dims}")
    if model_kind == "mlp":
        return _mlp(dims, gen, dtype)
    if model_kind == "cnn":
        return _cnn(dims, gen, dtype)
    raise ConfigError(f"unknown model kind {model_kind!r}; expected one of {MODEL_KINDS}")


def mlp_s(input_dim, classes, rng, dtype=T.DEFAULT_DTYPE):
    return init("mlp", [input_dim, 64, 64, classes], rng, dtype)


def sgd_step(params, grads, velocities, lr, momentum=0.0, weight_decay=0.0):
    """In-place momentum SGD: v <- m v + (g + wd theta); theta <- theta - lr v."""
    if lr <= 0:
        raise ConfigError("learning rate must be positive")
    for p, g, v in zip(params, grads, velocities):
        d = g + weight_decay * p.value if weight_decay else g
        v *= momentum
        v += d
        p.value = (p.value - lr * v).astype(p.dtype, copy=False)
    return params


class SGD:
    def __init__(self, params, momentum=0.9, weight_decay=0.0):
        self.params = list(params)
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.velocities = [np.zeros_like(p.value) for p in self.params]

    def step(self, lr):
        grads = [p.grad if p.grad is not None else np.zeros_like(p.value) for p in self.params]
        sgd_step(self.params, grads, self.velocities, lr, self.momentum, self.weight_decay)


def lr_schedule(kind, epoch, total_epochs, base_lr, milestones=(), factor=0.1, peak_fraction=0.4):
    """Learning rate at (0-based, possibly fractional) ``epoch``.

    ``step`` multiplies by ``factor`` once per milestone already reached;
    ``cyclic`` is a single triangle 0 -> base_lr (at ``peak_fraction``) -> 0.
    """
    if not 0 <= epoch <= total_epochs:
        raise ConfigError(f"epoch {epoch} outside [0, {total_epochs}]")
    if kind == "step":
        drops = sum(1 for m in milestones if epoch >= m)
        return base_lr * factor**drops
    if kind == "cyclic":
        peak = peak_fraction * total_epochs
        return float(np.interp(epoch, [0, peak, total_epochs], [0.0, base_lr, 0.0]))
    raise ConfigError(f"unknown lr schedule {kind!r}")
