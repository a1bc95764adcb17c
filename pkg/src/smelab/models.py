"""Victim architectures, flat weight vectors and surrogate interpolation."""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from math import prod

import numpy as np

from . import autodiff as ad
from . import functional as F
from .autodiff import Node

__all__ = [
    "LayoutError", "ParamVector", "ModelSpec", "mlp", "cnn2", "init_weights",
    "forward", "forward_loss", "grad_weights", "interpolate",
    "save_params", "load_params",
]


class LayoutError(ValueError):
    """Two parameter vectors do not share a layout."""


@dataclass(frozen=True, eq=False)
class ParamVector:
    """Flattened model weights plus the (name, shape) table that unflattens them."""

    layout: tuple
    values: np.ndarray

    def __post_init__(self):
        layout = tuple((str(name), tuple(int(d) for d in shape)) for name, shape in self.layout)
        values = np.array(self.values, dtype=np.float64).reshape(-1)
        expected = sum(prod(shape) for _, shape in layout)
        if values.size != expected:
            raise LayoutError(f"layout holds {expected} values, got {values.size}")
        values.setflags(write=False)
        object.__setattr__(self, "layout", layout)
        object.__setattr__(self, "values", values)

    def __len__(self):
        return self.values.size

    def unflatten(self):
        out, offset = {}, 0
        for name, shape in self.layout:
            n = prod(shape)
            out[name] = self.values[offset:offset + n].reshape(shape)
            offset += n
        return out

    @classmethod
    def from_arrays(cls, arrays):
        layout = tuple((name, np.shape(a)) for name, a in arrays.items())
        values = np.concatenate([np.ravel(a) for a in arrays.values()]) if arrays else []
        return cls(layout, values)

    def like(self, values):
        """A new vector with this layout and the given values."""
        return ParamVector(self.layout, values)

    def check_layout(self, other):
        if self.layout != other.layout:
            raise LayoutError("parameter vectors have different layouts")

    def __add__(self, other):
        self.check_layout(other)
        return self.like(self.values + other.values)

    def __sub__(self, other):
        self.check_layout(other)
        return self.like(self.values - other.values)

    def __mul__(self, c):
        return self.like(self.values * float(c))

    __rmul__ = __mul__

    def __eq__(self, other):
        return (isinstance(other, ParamVector) and self.layout == other.layout
                and np.array_equal(self.values, other.values))

    __hash__ = None


@dataclass(frozen=True)
class ModelSpec:
    """Architecture description; the parameter layout is a pure function of it.

    ``kind`` is ``"mlp"`` (fully connected layers of sizes ``hidden``) or
    ``"cnn2"`` (two stride-1 convolutions with padding ``kernel // 2``, each
    followed by the activation and 2x2 mean pooling, then a hidden and an output
    fully connected layer).
    """

    kind: str = "mlp"
    input_shape: tuple = (1, 8, 8)
    classes: int = 10
    hidden: tuple = (64,)
    conv_channels: tuple = (4, 8)
    kernel: int = 3
    fc_hidden: int = 32
    activation: str = "relu"
    bias: bool = True
    layout: tuple = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "input_shape", tuple(int(d) for d in self.input_shape))
        object.__setattr__(self, "hidden", tuple(int(d) for d in self.hidden))
        object.__setattr__(self, "conv_channels", tuple(int(d) for d in self.conv_channels))
        if self.kind not in ("mlp", "cnn2"):
            raise ValueError(f"unknown architecture {self.kind!r}")
        if self.activation not in ("relu", "tanh"):
            raise ValueError(f"unknown activation {self.activation!r}")
        if len(self.input_shape) != 3:
            raise ValueError("input_shape must be (channels, height, width)")
        object.__setattr__(self, "layout", tuple(self._layout()))

    def _dense(self, name, n_in, n_out):
        yield f"{name}.weight", (n_out, n_in)
        if self.bias:
            yield f"{name}.bias", (n_out,)

    def _layout(self):
        c, h, w = self.input_shape
        if self.kind == "mlp":
            sizes = [c * h * w, *self.hidden, self.classes]
            for i, (n_in, n_out) in enumerate(zip(sizes[:-1], sizes[1:])):
                yield from self._dense(f"fc{i + 1}", n_in, n_out)
            return
        if len(self.conv_channels) != 2:
            raise ValueError("cnn2 needs exactly two conv channel counts")
        if h % 4 or w % 4:
            raise ValueError("cnn2 needs height and width divisible by 4")
        c1, c2 = self.conv_channels
        k = self.kernel
        yield "conv1.weight", (c1, c, k, k)
        if self.bias:
            yield "conv1.bias", (c1,)
        yield "conv2.weight", (c2, c1, k, k)
        if self.bias:
            yield "conv2.bias", (c2,)
        yield from self._dense("fc1", c2 * (h // 4) * (w // 4), self.fc_hidden)
        yield from self._dense("fc2", self.fc_hidden, self.classes)

    @property
    def num_params(self):
        return sum(prod(s) for _, s in self.layout)

    @property
    def classifier(self):
        """Name of the final linear layer's weight."""
        return [name for name, _ in self.layout if name.endswith(".weight")][-1]


def mlp(input_shape=(1, 8, 8), classes=10, hidden=(64,), **kw):
    return ModelSpec("mlp", input_shape, classes, hidden=hidden, **kw)


def cnn2(input_shape=(1, 8, 8), classes=10, conv_channels=(4, 8), fc_hidden=32, **kw):
    return ModelSpec("cnn2", input_shape, classes, conv_channels=conv_channels,
                     fc_hidden=fc_hidden, **kw)


def init_weights(spec, seed=0):
    """Fan-in scaled uniform init, U(-1/sqrt(fan_in), 1/sqrt(fan_in)), for all tensors."""
    rng = np.random.default_rng(seed)
    arrays = {}
    fan_in = 1
    for name, shape in spec.layout:
        if name.endswith(".weight"):
            fan_in = prod(shape[1:])
        bound = 1.0 / np.sqrt(fan_in)
        arrays[name] = rng.uniform(-bound, bound, size=shape)
    return ParamVector(spec.layout, np.concatenate([a.ravel() for a in arrays.values()]))


def _as_node(w):
    if isinstance(w, Node):
        return w
    if isinstance(w, ParamVector):
        return Node(w.values)
    return Node(np.asarray(w, dtype=np.float64))


def _split(spec, w):
    params, offset = {}, 0
    for name, shape in spec.layout:
        n = prod(shape)
        params[name] = ad.reshape(ad.getitem(w, slice(offset, offset + n)), shape)
        offset += n
    if offset != w.size:
        raise LayoutError(f"{spec.kind} expects {offset} weights, got {w.size}")
    return params


def forward(spec, w, inputs):
    """Logits of shape (N, classes) for a batch of (N, C, H, W) inputs."""
    w, x = _as_node(w), _as_node(inputs)
    if x.ndim != 4 or x.shape[1:] != spec.input_shape:
        raise ad.ShapeError("forward", x.shape, (None,) + spec.input_shape)
    p = _split(spec, w)
    act = ad.relu if spec.activation == "relu" else ad.tanh
    b = (lambda name: p[name]) if spec.bias else (lambda name: None)
    if spec.kind == "cnn2":
        pad = spec.kernel // 2
        x = F.mean_pool2d(act(F.conv2d(x, p["conv1.weight"], b("conv1.bias"), padding=pad)))
        x = F.mean_pool2d(act(F.conv2d(x, p["conv2.weight"], b("conv2.bias"), padding=pad)))
        x = F.flatten(x)
        x = act(F.linear(x, p["fc1.weight"], b("fc1.bias")))
        return F.linear(x, p["fc2.weight"], b("fc2.bias"))
    x = F.flatten(x)
    n_layers = len(spec.hidden) + 1
    for i in range(1, n_layers + 1):
        x = F.linear(x, p[f"fc{i}.weight"], b(f"fc{i}.bias"))
        if i < n_layers:
            x = act(x)
    return x


def forward_loss(spec, w, inputs, labels):
    """Mean cross-entropy of the batch as a scalar graph node."""
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size and (labels.min() < 0 or labels.max() >= spec.classes):
        raise ValueError(f"labels must lie in [0, {spec.classes})")
    return F.cross_entropy(forward(spec, w, inputs), labels)


def grad_weights(spec, w, inputs, labels, create_graph=False):
    """Gradient of the mean loss with respect to the flat weights.

    With ``create_graph=True`` a :class:`Node` is returned that stays
    differentiable with respect to ``inputs`` (and ``w`` if it is a node that
    requires grad). Otherwise a :class:`ParamVector` is returned.
    """
    if create_graph:
        if not (isinstance(w, Node) and w.requires_grad):
            w = Node(_as_node(w).value, requires_grad=True)
        return ad.grad(forward_loss(spec, w, inputs, labels), w, create_graph=True)
    wn = Node(_as_node(w).value, requires_grad=True)
    x = inputs.value if isinstance(inputs, Node) else inputs
    g = ad.grad(forward_loss(spec, wn, x, labels), wn)
    return ParamVector(spec.layout, g)


def interpolate(w0, wT, alpha):
    """Surrogate weights ``alpha * w0 + (1 - alpha) * wT``."""
    w0.check_layout(wT)
    return w0.like(alpha * w0.values + (1.0 - alpha) * wT.values)


# ---------------------------------------------------------------- binary format

PARAM_MAGIC = b"SMEPVEC1"


def write_params(fh, pv):
    fh.write(PARAM_MAGIC)
    fh.write(struct.pack("<I", len(pv.layout)))
    for name, shape in pv.layout:
        raw = name.encode("utf-8")
        fh.write(struct.pack("<H", len(raw)))
        fh.write(raw)
        fh.write(struct.pack("<B", len(shape)))
        fh.write(struct.pack(f"<{len(shape)}I", *shape))
    fh.write(np.asarray(pv.values, dtype="<f8").tobytes())


def _read_exact(fh, n):
    data = fh.read(n)
    if len(data) != n:
        raise ValueError("truncated parameter file")
    return data


def read_params(fh):
    if _read_exact(fh, len(PARAM_MAGIC)) != PARAM_MAGIC:
        raise ValueError("not a parameter vector file (bad magic)")
    (count,) = struct.unpack("<I", _read_exact(fh, 4))
    layout = []
    for _ in range(count):
        (n,) = struct.unpack("<H", _read_exact(fh, 2))
        name = _read_exact(fh, n).decode("utf-8")
        (ndim,) = struct.unpack("<B", _read_exact(fh, 1))
        shape = struct.unpack(f"<{ndim}I", _read_exact(fh, 4 * ndim))
        layout.append((name, shape))
    total = sum(prod(s) for _, s in layout)
    values = np.frombuffer(_read_exact(fh, 8 * total), dtype="<f8")
    return ParamVector(tuple(layout), values.astype(np.float64))


def save_params(path, pv):
    with open(path, "wb") as fh:
        write_params(fh, pv)


def load_params(path):
    with open(path, "rb") as fh:
        return read_params(fh)
