"""Dense-tensor layer primitives and the layer graph that composes them.

Activations are float64 numpy arrays shaped (N, ...) with N the batch axis;
per-sample shapes follow the EEG convention (electrodes, time, features).
Twelve layer kinds are supported: spatial and temporal valid convolutions,
batch normalization with a single scalar statistic pair per layer, ELU,
max pooling, inverted dropout, flatten, dense, embedding lookup, elementwise
multiply, softmax, and sigmoid.  Each layer implements an exact reverse-mode
backward pass; there is no general autodiff.

A network is a small DAG described by :class:`NetworkSpec`: named nodes in
topological order, each wired to graph inputs or earlier nodes.  Parameter
bundles serialize to a flat binary container (magic, version, then per-entry
name + shape + 64-bit little-endian values); specs serialize to JSON.
"""

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import (
    ConfigError,
    ContainerFormatError,
    DimensionError,
    EmbeddingIndexError,
    StateError,
)

PARAMS_MAGIC = b"EEGSPATP"
PARAMS_VERSION = 1


# ---------------------------------------------------------------------------
# specs
# ---------------------------------------------------------------------------


@dataclass
class LayerSpec:
    kind: str
    params: dict = field(default_factory=dict)


@dataclass
class NodeSpec:
    name: str
    layer: LayerSpec
    inputs: list


@dataclass
class NetworkSpec:
    """Topologically ordered layer graph.

    inputs maps graph-input names to {"shape": per-sample shape list,
    "dtype": "float"|"int"}; outputs maps logical head names to node names.
    """

    inputs: dict
    nodes: list
    outputs: dict

    def to_json(self) -> str:
        doc = {
            "inputs": self.inputs,
            "nodes": [
                {
                    "name": n.name,
                    "kind": n.layer.kind,
                    "params": n.layer.params,
                    "inputs": n.inputs,
                }
                for n in self.nodes
            ],
            "outputs": self.outputs,
        }
        return json.dumps(doc, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "NetworkSpec":
        doc = json.loads(text)
        nodes = [
            NodeSpec(d["name"], LayerSpec(d["kind"], d["params"]), d["inputs"])
            for d in doc["nodes"]
        ]
        return cls(doc["inputs"], nodes, doc["outputs"])


# ---------------------------------------------------------------------------
# layers
# ---------------------------------------------------------------------------


class Layer:
    """One graph node: owns parameters, a forward cache, and gradients."""

    def __init__(self, spec: LayerSpec):
        self.spec = spec
        self.params = {}
        self.non_trainable = {}
        self.grads = {}
        self.cache = None

    def build(self, in_shapes, rng):
        """Allocate parameters for the given per-sample input shapes and
        return the per-sample output shape."""
        raise NotImplementedError

    def forward(self, xs, train=False, rng=None):
        raise NotImplementedError

    def backward(self, gout):
        """Return per-input gradients; parameter gradients land in
        ``self.grads``.  Requires a train-mode forward cache."""
        raise NotImplementedError

    def _need_cache(self):
        if self.cache is None:
            raise StateError(
                f"backward on {self.spec.kind} without a cached train-mode forward"
            )
        return self.cache


def _glorot(rng, shape, fan_in, fan_out):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


class Conv2d(Layer):
    """Valid cross-correlation, stride 1, no kernel flip."""

    def kernel_hw(self, in_shape):
        raise NotImplementedError

    def build(self, in_shapes, rng):
        (h, w, c_in) = in_shapes[0]
        kh, kw = self.kernel_hw(in_shapes[0])
        n_k = self.spec.params["filters"]
        if kh > h:
            raise DimensionError(f"kernel height {kh} exceeds input height {h}")
        if kw > w:
            raise DimensionError(f"kernel width {kw} exceeds input width {w}")
        fan_in = kh * kw * c_in
        fan_out = kh * kw * n_k
        self.params["kernel"] = _glorot(rng, (kh, kw, c_in, n_k), fan_in, fan_out)
        self.params["bias"] = np.zeros(n_k)
        return (h - kh + 1, w - kw + 1, n_k)

    def forward(self, xs, train=False, rng=None):
        x = xs[0]
        out = kernels.conv2d_forward(x, self.params["kernel"], self.params["bias"])
        self.cache = x if train else None
        return out

    def backward(self, gout):
        x = self._need_cache()
        gx, gk, gb = kernels.conv2d_backward(x, self.params["kernel"], gout)
        self.grads["kernel"] = gk
        self.grads["bias"] = gb
        return [gx]


class SpatialConv(Conv2d):
    """First-layer convolution spanning the whole electrode axis."""

    def kernel_hw(self, in_shape):
        return (in_shape[0], 1)


class TemporalConv(Conv2d):
    """(1, C) convolution along the time axis within each feature channel."""

    def kernel_hw(self, in_shape):
        return (1, self.spec.params["width"])


class BatchNorm(Layer):
    """Batch normalization with one scalar statistic pair for the layer.

    The mean and variance are computed jointly over every batch, electrode,
    time, and feature position, so the layer owns exactly two trainable
    scalars (gamma, beta) and two non-trainable ones (running mean and
    variance).  Train mode uses biased (population) batch statistics and
    updates the running pair by exponential moving average.
    """

    def build(self, in_shapes, rng):
        self.eps = self.spec.params.get("eps", 1e-3)
        self.momentum = self.spec.params.get("momentum", 0.99)
        self.params["gamma"] = np.array(1.0)
        self.params["beta"] = np.array(0.0)
        self.non_trainable["running_mean"] = np.array(0.0)
        self.non_trainable["running_var"] = np.array(1.0)
        return in_shapes[0]

    def forward(self, xs, train=False, rng=None):
        x = xs[0]
        gamma = float(self.params["gamma"])
        beta = float(self.params["beta"])
        if train:
            if x.shape[0] < 2:
                raise ConfigError(
                    "batch normalization needs a train-mode batch of at least 2 "
                    "samples (variance is degenerate for a single sample)"
                )
            mu = x.mean()
            var = x.var()
            m = self.momentum
            self.non_trainable["running_mean"] = np.array(
                m * float(self.non_trainable["running_mean"]) + (1 - m) * mu
            )
            self.non_trainable["running_var"] = np.array(
                m * float(self.non_trainable["running_var"]) + (1 - m) * var
            )
            inv_std = 1.0 / np.sqrt(var + self.eps)
            x_hat = (x - mu) * inv_std
            self.cache = (x_hat, inv_std)
        else:
            mu = float(self.non_trainable["running_mean"])
            var = float(self.non_trainable["running_var"])
            x_hat = (x - mu) / np.sqrt(var + self.eps)
            self.cache = None
        return gamma * x_hat + beta

    def backward(self, gout):
        x_hat, inv_std = self._need_cache()
        gamma = float(self.params["gamma"])
        self.grads["beta"] = np.array(gout.sum())
        self.grads["gamma"] = np.array((gout * x_hat).sum())
        g_mean = gout.mean()
        gx_hat_mean = (gout * x_hat).mean()
        gx = gamma * inv_std * (gout - g_mean - x_hat * gx_hat_mean)
        return [gx]


class Elu(Layer):
    def build(self, in_shapes, rng):
        self.alpha = self.spec.params.get("alpha", 1.0)
        return in_shapes[0]

    def forward(self, xs, train=False, rng=None):
        x = xs[0]
        neg = self.alpha * np.expm1(np.minimum(x, 0.0))
        out = np.where(x > 0, x, neg)
        self.cache = x if train else None
        return out

    def backward(self, gout):
        x = self._need_cache()
        slope = np.where(x > 0, 1.0, self.alpha * np.exp(np.minimum(x, 0.0)))
        return [gout * slope]


class MaxPool(Layer):
    def build(self, in_shapes, rng):
        h, w, c = in_shapes[0]
        self.width = self.spec.params.get("width", 3)
        self.stride = self.spec.params.get("stride", self.width)
        if w < self.width:
            raise DimensionError(
                f"time axis extent {w} shorter than pool width {self.width}"
            )
        return (h, (w - self.width) // self.stride + 1, c)

    def forward(self, xs, train=False, rng=None):
        x = xs[0]
        out, arg = kernels.maxpool_forward(x, self.width, self.stride)
        self.cache = (arg, x.shape[2]) if train else None
        return out

    def backward(self, gout):
        arg, in_width = self._need_cache()
        return [kernels.maxpool_backward(gout, arg, in_width)]


class Dropout(Layer):
    """Inverted dropout: train mode zeroes with probability p and rescales
    survivors by 1/(1-p); inference is the identity."""

    def build(self, in_shapes, rng):
        self.rate = self.spec.params["rate"]
        if not 0.0 <= self.rate < 1.0:
            raise ConfigError(f"dropout rate must be in [0, 1), got {self.rate}")
        return in_shapes[0]

    def forward(self, xs, train=False, rng=None):
        x = xs[0]
        if not train or self.rate == 0.0:
            self.cache = np.ones(()) if train else None
            return x
        if rng is None:
            raise StateError("train-mode dropout requires an rng")
        keep = rng.random(x.shape) >= self.rate
        scale = 1.0 / (1.0 - self.rate)
        mask = keep * scale
        self.cache = mask
        return x * mask

    def backward(self, gout):
        mask = self._need_cache()
        return [gout * mask]


class Flatten(Layer):
    def build(self, in_shapes, rng):
        self.in_shape = tuple(in_shapes[0])
        return (int(np.prod(self.in_shape)),)

    def forward(self, xs, train=False, rng=None):
        x = xs[0]
        self.cache = x.shape if train else None
        return x.reshape(x.shape[0], -1)

    def backward(self, gout):
        shape = self._need_cache()
        return [gout.reshape(shape)]


class Dense(Layer):
    def build(self, in_shapes, rng):
        if len(in_shapes[0]) != 1:
            raise DimensionError(
                f"dense layer expects a flat input, got shape {in_shapes[0]}"
            )
        n_in = in_shapes[0][0]
        units = self.spec.params["units"]
        self.params["weight"] = _glorot(rng, (n_in, units), n_in, units)
        self.params["bias"] = np.zeros(units)
        return (units,)

    def forward(self, xs, train=False, rng=None):
        x = xs[0]
        if x.shape[1] != self.params["weight"].shape[0]:
            raise DimensionError(
                f"dense input length {x.shape[1]} does not match weight rows "
                f"{self.params['weight'].shape[0]}"
            )
        self.cache = x if train else None
        return x @ self.params["weight"] + self.params["bias"]

    def backward(self, gout):
        x = self._need_cache()
        self.grads["weight"] = x.T @ gout
        self.grads["bias"] = gout.sum(axis=0)
        return [gout @ self.params["weight"].T]


class Embedding(Layer):
    """Trainable (vocab, dim) lookup table addressed by integer input."""

    def build(self, in_shapes, rng):
        vocab = self.spec.params["vocab"]
        dim = self.spec.params["dim"]
        self.params["table"] = rng.uniform(-0.05, 0.05, size=(vocab, dim))
        return (1, dim)

    def forward(self, xs, train=False, rng=None):
        idx = np.asarray(xs[0]).reshape(-1).astype(np.int64)
        vocab = self.params["table"].shape[0]
        if idx.min(initial=0) < 0 or idx.max(initial=0) >= vocab:
            bad = idx[(idx < 0) | (idx >= vocab)][0]
            raise EmbeddingIndexError(
                f"embedding index {bad} outside [0, {vocab})"
            )
        self.cache = idx if train else None
        return self.params["table"][idx]

    def backward(self, gout):
        idx = self._need_cache()
        gt = np.zeros_like(self.params["table"])
        np.add.at(gt, idx, gout)
        self.grads["table"] = gt
        return [None]


class Multiply(Layer):
    def build(self, in_shapes, rng):
        a, b = in_shapes
        if tuple(a) != tuple(b):
            raise DimensionError(f"multiply operands differ in shape: {a} vs {b}")
        return tuple(a)

    def forward(self, xs, train=False, rng=None):
        a, b = xs
        if a.shape != b.shape:
            raise DimensionError(
                f"multiply operands differ in shape: {a.shape} vs {b.shape}"
            )
        self.cache = (a, b) if train else None
        return a * b

    def backward(self, gout):
        a, b = self._need_cache()
        return [gout * b, gout * a]


class Softmax(Layer):
    def build(self, in_shapes, rng):
        return in_shapes[0]

    def forward(self, xs, train=False, rng=None):
        z = xs[0]
        z = z - z.max(axis=-1, keepdims=True)
        e = np.exp(z)
        p = e / e.sum(axis=-1, keepdims=True)
        self.cache = p if train else None
        return p

    def backward(self, gout):
        p = self._need_cache()
        dot = (gout * p).sum(axis=-1, keepdims=True)
        return [p * (gout - dot)]


class Sigmoid(Layer):
    def build(self, in_shapes, rng):
        return in_shapes[0]

    def forward(self, xs, train=False, rng=None):
        x = xs[0]
        pos = x >= 0
        ex = np.exp(np.where(pos, -x, x))
        s = np.where(pos, 1.0 / (1.0 + ex), ex / (1.0 + ex))
        self.cache = s if train else None
        return s

    def backward(self, gout):
        s = self._need_cache()
        return [gout * s * (1.0 - s)]


LAYER_KINDS = {
    "spatial_conv": SpatialConv,
    "temporal_conv": TemporalConv,
    "batchnorm": BatchNorm,
    "elu": Elu,
    "maxpool": MaxPool,
    "dropout": Dropout,
    "flatten": Flatten,
    "dense": Dense,
    "embedding": Embedding,
    "multiply": Multiply,
    "softmax": Softmax,
    "sigmoid": Sigmoid,
}

# trainable-parameter arithmetic per kind, given resolved input shapes
_PARAM_FREE = ("elu", "maxpool", "dropout", "flatten", "multiply", "softmax", "sigmoid")


def infer_shapes(spec: NetworkSpec) -> dict:
    """Per-sample output shape of every node, plus graph inputs.

    Pure shape arithmetic: no parameters are allocated.
    """
    shapes = {name: tuple(meta["shape"]) for name, meta in spec.inputs.items()}
    for node in spec.nodes:
        kind = node.layer.kind
        p = node.layer.params
        ins = [shapes[i] for i in node.inputs]
        if kind == "spatial_conv":
            h, w, c = ins[0]
            out = (1, w, p["filters"])
        elif kind == "temporal_conv":
            h, w, c = ins[0]
            if p["width"] > w:
                raise DimensionError(
                    f"temporal kernel width {p['width']} exceeds time axis {w}"
                )
            out = (h, w - p["width"] + 1, p["filters"])
        elif kind == "maxpool":
            h, w, c = ins[0]
            width = p.get("width", 3)
            stride = p.get("stride", width)
            out = (h, (w - width) // stride + 1, c)
        elif kind == "flatten":
            out = (int(np.prod(ins[0])),)
        elif kind == "dense":
            out = (p["units"],)
        elif kind == "embedding":
            out = (1, p["dim"])
        elif kind in ("batchnorm", "elu", "dropout", "multiply", "softmax", "sigmoid"):
            out = tuple(ins[0])
        else:
            raise ConfigError(f"unknown layer kind {kind!r}")
        shapes[node.name] = out
    return shapes


def param_count(spec: NetworkSpec):
    """(total, trainable) parameter counts, by layer summation.

    A pure function of the spec: counts depend only on shapes, never data.
    """
    shapes = infer_shapes(spec)
    total = 0
    trainable = 0
    for node in spec.nodes:
        kind = node.layer.kind
        p = node.layer.params
        in_shape = shapes[node.inputs[0]]
        if kind in ("spatial_conv", "temporal_conv"):
            h, w, c = in_shape
            kh, kw = (h, 1) if kind == "spatial_conv" else (1, p["width"])
            n = kh * kw * c * p["filters"] + p["filters"]
            total += n
            trainable += n
        elif kind == "batchnorm":
            total += 4
            trainable += 2
        elif kind == "dense":
            n = in_shape[0] * p["units"] + p["units"]
            total += n
            trainable += n
        elif kind == "embedding":
            n = p["vocab"] * p["dim"]
            total += n
            trainable += n
        elif kind not in _PARAM_FREE:
            raise ConfigError(f"unknown layer kind {kind!r}")
    return total, trainable


# ---------------------------------------------------------------------------
# network
# ---------------------------------------------------------------------------


class Network:
    """Executable instance of a NetworkSpec with allocated parameters.

    Forward/backward on one instance is single-threaded; inference with
    train=False mutates no state, so a frozen network is safe to share
    between concurrent readers.
    """

    def __init__(self, spec: NetworkSpec, seed=0):
        self.spec = spec
        rng = np.random.default_rng(seed)
        self.layers = {}
        shapes = {name: tuple(meta["shape"]) for name, meta in spec.inputs.items()}
        for node in spec.nodes:
            layer = LAYER_KINDS[node.layer.kind](node.layer)
            in_shapes = [shapes[i] for i in node.inputs]
            shapes[node.name] = layer.build(in_shapes, rng)
            self.layers[node.name] = layer
        self.shapes = shapes
        self._last_inputs = None

    # -- parameter access ---------------------------------------------------

    def named_params(self, trainable_only=True):
        """Ordered (name, array) pairs; names are node/param."""
        out = []
        for node in self.spec.nodes:
            layer = self.layers[node.name]
            for key in sorted(layer.params):
                out.append((f"{node.name}/{key}", layer.params[key]))
            if not trainable_only:
                for key in sorted(layer.non_trainable):
                    out.append((f"{node.name}/{key}", layer.non_trainable[key]))
        return out

    def named_grads(self):
        out = []
        for node in self.spec.nodes:
            layer = self.layers[node.name]
            for key in sorted(layer.params):
                out.append((f"{node.name}/{key}", layer.grads.get(key)))
        return out

    def set_param(self, name, value):
        node_name, key = name.rsplit("/", 1)
        layer = self.layers[node_name]
        store = layer.params if key in layer.params else layer.non_trainable
        if key not in store:
            raise ConfigError(f"unknown parameter {name!r}")
        store[key] = np.asarray(value, dtype=np.float64).reshape(store[key].shape)

    def param_count(self):
        total = sum(p.size for _, p in self.named_params(trainable_only=False))
        trainable = sum(p.size for _, p in self.named_params())
        return total, trainable

    # -- execution ------------------------------------------------------------

    def forward(self, inputs, train=False, rng=None):
        """Run the graph; returns {head name: batch output}."""
        acts = dict(inputs)
        for node in self.spec.nodes:
            xs = [acts[i] for i in node.inputs]
            acts[node.name] = self.layers[node.name].forward(xs, train=train, rng=rng)
        if train:
            self._last_inputs = {k: np.asarray(v) for k, v in inputs.items()}
        return {head: acts[node] for head, node in self.spec.outputs.items()}

    def backward(self, out_grads):
        """Reverse-mode pass from head gradients.

        Populates every layer's parameter gradients and returns gradients
        with respect to the graph inputs.
        """
        if self._last_inputs is None:
            raise StateError("backward requires a preceding train-mode forward")
        pending = {}
        for head, g in out_grads.items():
            node = self.spec.outputs[head]
            pending[node] = pending.get(node, 0) + g
        input_grads = {}
        for node in reversed(self.spec.nodes):
            if node.name not in pending:
                continue
            gin = self.layers[node.name].backward(pending.pop(node.name))
            for src, g in zip(node.inputs, gin):
                if g is None:
                    continue
                if src in self.spec.inputs:
                    input_grads[src] = input_grads.get(src, 0) + g
                else:
                    pending[src] = pending.get(src, 0) + g
        return input_grads

    # -- persistence ----------------------------------------------------------

    def save_params(self, path):
        entries = self.named_params(trainable_only=False)
        with open(path, "wb") as fh:
            fh.write(PARAMS_MAGIC)
            fh.write(struct.pack("<II", PARAMS_VERSION, len(entries)))
            for name, arr in entries:
                raw = name.encode("utf-8")
                fh.write(struct.pack("<H", len(raw)))
                fh.write(raw)
                fh.write(struct.pack("<B", arr.ndim))
                for d in arr.shape:
                    fh.write(struct.pack("<I", d))
                fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())

    def load_params(self, path):
        for name, arr in read_params_container(path).items():
            self.set_param(name, arr)


def read_params_container(path):
    """Parse the flat binary parameter container into {name: array}."""
    with open(path, "rb") as fh:
        data = fh.read()
    if data[: len(PARAMS_MAGIC)] != PARAMS_MAGIC:
        raise ContainerFormatError(f"{path}: bad magic, not a parameter container")
    off = len(PARAMS_MAGIC)
    version, n_entries = struct.unpack_from("<II", data, off)
    off += 8
    if version != PARAMS_VERSION:
        raise ContainerFormatError(f"{path}: unsupported container version {version}")
    out = {}
    try:
        for _ in range(n_entries):
            (name_len,) = struct.unpack_from("<H", data, off)
            off += 2
            name = data[off : off + name_len].decode("utf-8")
            off += name_len
            (ndim,) = struct.unpack_from("<B", data, off)
            off += 1
            shape = struct.unpack_from(f"<{ndim}I", data, off) if ndim else ()
            off += 4 * ndim
            size = int(np.prod(shape)) if ndim else 1
            arr = np.frombuffer(data, dtype="<f8", count=size, offset=off).reshape(
                shape
            )
            off += 8 * size
            out[name] = arr.astype(np.float64)
    except (struct.error, ValueError) as exc:
        raise ContainerFormatError(f"{path}: truncated parameter container") from exc
    if off != len(data):
        raise ContainerFormatError(f"{path}: trailing bytes after last entry")
    return out
