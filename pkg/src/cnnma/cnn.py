"""Small tanh CNN (conv -> subsample -> conv -> subsample -> sigmoid dense).

All trainable values live in one flat float64 vector owned by the
:class:`Network`; the layer objects hold reshaped *views* into it, so
flattening for the annealer is a copy and nothing else.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .mnist_io import LabelSet, MiniBatch


class ShapeError(ValueError):
    pass


class DivergenceError(FloatingPointError):
    """Training produced a non-finite loss."""


@dataclass(frozen=True)
class Architecture:
    input_size: tuple[int, int] = (28, 28)
    conv_maps: tuple[int, ...] = (6, 12)
    kernel_sizes: tuple[int, ...] = (5, 5)
    pool: int = 2
    n_classes: int = 10

    def __post_init__(self):
        if len(self.conv_maps) != len(self.kernel_sizes):
            raise ShapeError("conv_maps and kernel_sizes must have equal length")
        self.spatial_chain()

    @property
    def tag(self) -> str:
        parts = ["i"]
        for maps in self.conv_maps:
            parts += [f"{maps}c", f"{self.pool}s"]
        return "-".join(parts)

    def spatial_chain(self) -> list[tuple[int, int]]:
        """Spatial size after the input and after every conv/subsample layer."""
        h, w = self.input_size
        chain = [(h, w)]
        for k in self.kernel_sizes:
            h, w = h - k + 1, w - k + 1
            if h < 1 or w < 1:
                raise ShapeError(f"kernel {k} does not fit a {chain[-1]} map")
            chain.append((h, w))
            if h % self.pool or w % self.pool:
                raise ShapeError(f"{h}x{w} map is not divisible by pool factor {self.pool}")
            h, w = h // self.pool, w // self.pool
            chain.append((h, w))
        return chain

    @property
    def feature_size(self) -> int:
        h, w = self.spatial_chain()[-1]
        return self.conv_maps[-1] * h * w

    def to_dict(self) -> dict:
        return {
            "input_size": list(self.input_size),
            "conv_maps": list(self.conv_maps),
            "kernel_sizes": list(self.kernel_sizes),
            "pool": self.pool,
            "n_classes": self.n_classes,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Architecture":
        return cls(
            input_size=tuple(d["input_size"]),
            conv_maps=tuple(d["conv_maps"]),
            kernel_sizes=tuple(d["kernel_sizes"]),
            pool=d["pool"],
            n_classes=d["n_classes"],
        )


DEFAULT_ARCH = Architecture()


@dataclass(frozen=True)
class Segment:
    """Where one parameter array sits inside the flat vector."""

    layer: int
    name: str
    shape: tuple[int, ...]
    offset: int

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))

    @property
    def key(self) -> str:
        return f"{self.layer}.{self.name}"


@dataclass
class ConvLayer:
    kernels: np.ndarray  # (out_maps, in_maps, k, k)
    biases: np.ndarray  # (out_maps,)


@dataclass
class SubsampleLayer:
    beta: np.ndarray  # (maps,)
    bias: np.ndarray  # (maps,)
    pool: int = 2


@dataclass
class DenseOutputLayer:
    weights: np.ndarray  # (n_classes, features)
    biases: np.ndarray  # (n_classes,)


def build_layout(arch: Architecture) -> list[Segment]:
    layout = []
    offset = 0

    def add(layer, name, shape):
        nonlocal offset
        seg = Segment(layer, name, tuple(shape), offset)
        layout.append(seg)
        offset += seg.size

    in_maps = 1
    layer = 0
    for maps, k in zip(arch.conv_maps, arch.kernel_sizes):
        add(layer, "kernels", (maps, in_maps, k, k))
        add(layer, "biases", (maps,))
        add(layer + 1, "beta", (maps,))
        add(layer + 1, "bias", (maps,))
        in_maps = maps
        layer += 2
    add(layer, "weights", (arch.n_classes, arch.feature_size))
    add(layer, "biases", (arch.n_classes,))
    return layout


class Network:
    """Parameter vector plus the layer views carved out of it."""

    def __init__(self, arch: Architecture, params: np.ndarray | None = None):
        self.arch = arch
        self.layout = build_layout(arch)
        n = self.layout[-1].offset + self.layout[-1].size
        if params is None:
            params = np.zeros(n)
        params = np.array(params, dtype=np.float64, copy=True)
        if params.shape != (n,):
            raise ShapeError(f"parameter vector has shape {params.shape}, layout needs ({n},)")
        self.params = params
        self.layers = self._make_views()

    @property
    def tag(self) -> str:
        return self.arch.tag

    @property
    def n_params(self) -> int:
        return self.params.shape[0]

    def _make_views(self):
        views = {}
        for seg in self.layout:
            views[seg.key] = self.params[seg.offset : seg.offset + seg.size].reshape(seg.shape)
        layers = []
        n_stages = len(self.arch.conv_maps)
        for s in range(n_stages):
            c, p = 2 * s, 2 * s + 1
            layers.append(ConvLayer(views[f"{c}.kernels"], views[f"{c}.biases"]))
            layers.append(SubsampleLayer(views[f"{p}.beta"], views[f"{p}.bias"], self.arch.pool))
        d = 2 * n_stages
        layers.append(DenseOutputLayer(views[f"{d}.weights"], views[f"{d}.biases"]))
        return layers

    def clone(self) -> "Network":
        return Network(self.arch, self.params)

    def __repr__(self):
        return f"Network({self.tag}, n_params={self.n_params})"


def init_network(arch: Architecture = DEFAULT_ARCH, seed: int = 0, beta_init: float = 1.0) -> Network:
    """Uniform +-sqrt(6 / (fan_in + fan_out)) weights, zero biases, beta = ``beta_init``."""
    rng = np.random.default_rng(seed)
    net = Network(arch)
    for layer in net.layers:
        if isinstance(layer, ConvLayer):
            out_maps, in_maps, k, _ = layer.kernels.shape
            bound = np.sqrt(6.0 / ((in_maps + out_maps) * k * k))
            layer.kernels[...] = rng.uniform(-bound, bound, layer.kernels.shape)
        elif isinstance(layer, SubsampleLayer):
            layer.beta[...] = beta_init
        else:
            n_out, n_in = layer.weights.shape
            bound = np.sqrt(6.0 / (n_in + n_out))
            layer.weights[...] = rng.uniform(-bound, bound, layer.weights.shape)
    return net


def flatten_params(net: Network) -> np.ndarray:
    return net.params.copy()


def unflatten_params(net: Network, v) -> Network:
    """A new network with ``net``'s architecture and parameters ``v``."""
    v = np.asarray(v, dtype=np.float64)
    if v.shape != (net.n_params,):
        raise ShapeError(f"vector of shape {v.shape} does not match {net.n_params} parameters")
    return Network(net.arch, v)


# ---------------------------------------------------------------- layers


def _as_maps(x: np.ndarray) -> np.ndarray:
    # (B, H, W) -> (B, 1, H, W)
    return x[:, None] if x.ndim == 3 else x


def _conv_pre(layer: ConvLayer, x: np.ndarray):
    x = _as_maps(x)
    out_maps, in_maps, k, _ = layer.kernels.shape
    if x.ndim != 4 or x.shape[1] != in_maps:
        raise ShapeError(f"conv layer expects {in_maps} input maps, got input of shape {x.shape}")
    if x.shape[2] < k or x.shape[3] < k:
        raise ShapeError(f"{x.shape[2]}x{x.shape[3]} input is smaller than the {k}x{k} kernel")
    b, _, h, w = x.shape
    ho, wo = h - k + 1, w - k + 1
    windows = sliding_window_view(x, (k, k), axis=(2, 3))  # (B, C, Ho, Wo, k, k)
    # im2col: one row per output pixel, reused by the backward pass
    cols = windows.transpose(0, 2, 3, 1, 4, 5).reshape(b * ho * wo, in_maps * k * k)
    z = cols @ layer.kernels.reshape(out_maps, -1).T
    z = z.reshape(b, ho, wo, out_maps).transpose(0, 3, 1, 2) + layer.biases[None, :, None, None]
    return z, cols


def conv_forward(layer: ConvLayer, x: np.ndarray) -> np.ndarray:
    """tanh of valid cross-correlation summed over input maps, plus bias."""
    z, _ = _conv_pre(layer, x)
    return np.tanh(z)


def _block_sum(x: np.ndarray, pool: int) -> np.ndarray:
    b, c, h, w = x.shape
    if h % pool or w % pool:
        raise ShapeError(f"{h}x{w} map cannot be pooled by {pool}")
    return x.reshape(b, c, h // pool, pool, w // pool, pool).sum(axis=(3, 5))


def subsample_forward(layer: SubsampleLayer, x: np.ndarray) -> np.ndarray:
    """tanh(beta * sum over each non-overlapping pool x pool block + bias)."""
    s = _block_sum(_as_maps(x), layer.pool)
    return np.tanh(layer.beta[None, :, None, None] * s + layer.bias[None, :, None, None])


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def dense_forward(layer: DenseOutputLayer, x: np.ndarray) -> np.ndarray:
    x = x.reshape(x.shape[0], -1)
    if x.shape[1] != layer.weights.shape[1]:
        raise ShapeError(f"dense layer expects {layer.weights.shape[1]} features, got {x.shape[1]}")
    return _sigmoid(x @ layer.weights.T + layer.biases)


def _inputs_of(batch) -> np.ndarray:
    return batch.inputs if isinstance(batch, MiniBatch) else np.asarray(batch, dtype=np.float64)


def network_forward(net: Network, batch) -> np.ndarray:
    """Class scores of shape (B, n_classes) for a MiniBatch or a (B, H, W) array."""
    x = _inputs_of(batch)
    if x.ndim != 3 or x.shape[1:] != net.arch.input_size:
        raise ShapeError(f"expected inputs of shape (B, {net.arch.input_size}), got {x.shape}")
    for layer in net.layers[:-1]:
        if isinstance(layer, ConvLayer):
            x = conv_forward(layer, x)
        else:
            x = subsample_forward(layer, x)
    return dense_forward(net.layers[-1], x)


def loss(predicted: np.ndarray, target: np.ndarray) -> float:
    """Half root-mean (over samples) of the summed squared output error.

    ``N`` is the number of samples, i.e. the leading dimension.
    """
    predicted = np.asarray(predicted, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if predicted.shape != target.shape:
        raise ShapeError(f"shape mismatch: {predicted.shape} vs {target.shape}")
    if predicted.ndim == 0 or predicted.shape[0] == 0:
        raise ValueError("loss needs at least one sample")
    n = predicted.shape[0]
    diff = target - predicted
    return 0.5 * float(np.sqrt(np.sum(diff * diff) / n))


# ---------------------------------------------------------------- gradients


def _forward_cached(net: Network, x: np.ndarray):
    cache = []
    a = _as_maps(x)
    for layer in net.layers[:-1]:
        if isinstance(layer, ConvLayer):
            z, cols = _conv_pre(layer, a)
            out = np.tanh(z)
            cache.append((cols, a.shape, out))
        else:
            s = _block_sum(a, layer.pool)
            out = np.tanh(layer.beta[None, :, None, None] * s + layer.bias[None, :, None, None])
            cache.append((s, out))
        a = out
    flat = a.reshape(a.shape[0], -1)
    y = dense_forward(net.layers[-1], flat)
    return y, flat, a.shape, cache


def _conv_backward(layer: ConvLayer, dz, cols, in_shape, need_dx=True):
    out_maps, in_maps, k, _ = layer.kernels.shape
    b, _, h, w = in_shape
    ho, wo = h - k + 1, w - k + 1
    dz_mat = dz.transpose(0, 2, 3, 1).reshape(-1, out_maps)
    dW = (dz_mat.T @ cols).reshape(layer.kernels.shape)
    db = dz.sum(axis=(0, 2, 3))
    if not need_dx:
        return dW, db, None
    dcols = (dz_mat @ layer.kernels.reshape(out_maps, -1)).reshape(b, ho, wo, in_maps, k, k)
    dcols = dcols.transpose(0, 3, 4, 5, 1, 2)  # (B, C, k, k, Ho, Wo)
    dx = np.zeros(in_shape)
    for i in range(k):
        for j in range(k):
            dx[:, :, i : i + ho, j : j + wo] += dcols[:, :, i, j]
    return dW, db, dx


def loss_and_grads(net: Network, batch: MiniBatch) -> tuple[float, np.ndarray]:
    """Batch loss and its gradient, laid out like ``flatten_params(net)``."""
    y, flat, last_shape, cache = _forward_cached(net, batch.inputs)
    value = loss(y, batch.targets)
    grad = np.zeros(net.n_params)
    if value == 0.0:
        return value, grad
    views = {}
    for seg in net.layout:
        views[seg.key] = grad[seg.offset : seg.offset + seg.size].reshape(seg.shape)

    n = y.shape[0]
    dy = (y - batch.targets) / (4.0 * n * value)
    dense = net.layers[-1]
    d = len(net.layers) - 1
    dz = dy * y * (1.0 - y)
    views[f"{d}.weights"][...] = dz.T @ flat
    views[f"{d}.biases"][...] = dz.sum(axis=0)
    da = (dz @ dense.weights).reshape(last_shape)

    for i in range(len(net.layers) - 2, -1, -1):
        layer = net.layers[i]
        if isinstance(layer, SubsampleLayer):
            s, out = cache[i]
            dz = da * (1.0 - out * out)
            views[f"{i}.beta"][...] = np.sum(dz * s, axis=(0, 2, 3))
            views[f"{i}.bias"][...] = dz.sum(axis=(0, 2, 3))
            ds = dz * layer.beta[None, :, None, None]
            da = np.repeat(np.repeat(ds, layer.pool, axis=2), layer.pool, axis=3)
        else:
            cols, in_shape, out = cache[i]
            dz = da * (1.0 - out * out)
            dW, db, dx = _conv_backward(layer, dz, cols, in_shape, need_dx=i > 0)
            views[f"{i}.kernels"][...] = dW
            views[f"{i}.biases"][...] = db
            da = dx
    return value, grad


def backprop_grads(net: Network, batch: MiniBatch) -> np.ndarray:
    return loss_and_grads(net, batch)[1]


def sgd_epoch(net: Network, batches, learning_rate: float) -> tuple[Network, float]:
    """One pass of plain mini-batch gradient descent, in place.

    Returns the network and the mean of the per-batch losses (each taken
    before that batch's update).
    """
    if learning_rate < 0:
        raise ValueError(f"learning_rate must be non-negative, got {learning_rate}")
    losses = []
    for batch in batches:
        value, grad = loss_and_grads(net, batch)
        if not np.isfinite(value) or not np.all(np.isfinite(grad)):
            raise DivergenceError(f"non-finite loss at batch {len(losses)}")
        losses.append(value)
        if learning_rate:
            net.params -= learning_rate * grad
    return net, float(np.mean(losses)) if losses else float("nan")


def predict(net: Network, images: np.ndarray, chunk: int = 1000) -> np.ndarray:
    out = [network_forward(net, images[i : i + chunk]) for i in range(0, images.shape[0], chunk)]
    return np.concatenate(out) if out else np.zeros((0, net.arch.n_classes))


def accuracy(net: Network, images: np.ndarray, labels: LabelSet) -> float:
    """Percentage of samples whose argmax class equals the label."""
    if images.shape[0] != labels.count:
        raise ShapeError(f"{images.shape[0]} images but {labels.count} labels")
    if labels.count == 0:
        return float("nan")
    hits = np.argmax(predict(net, images), axis=1) == labels.labels
    return 100.0 * float(np.count_nonzero(hits)) / labels.count


# ---------------------------------------------------------------- checkpoints


def save_network(net: Network, path) -> Path:
    path = Path(path)
    meta = {
        "tag": net.tag,
        "arch": net.arch.to_dict(),
        "layout": [[s.layer, s.name, list(s.shape), s.offset] for s in net.layout],
    }
    with open(path, "wb") as f:
        np.savez(f, meta=np.array(json.dumps(meta)), params=net.params)
    return path


def load_network(path) -> Network:
    with np.load(path, allow_pickle=False) as data:
        meta = json.loads(str(data["meta"]))
        params = data["params"]
        arch = Architecture.from_dict(meta["arch"])
        net = Network(arch, params)
    stored = [[s.layer, s.name, list(s.shape), s.offset] for s in net.layout]
    if stored != meta["layout"] or meta["tag"] != net.tag:
        raise ShapeError(f"checkpoint layout does not match architecture {net.tag}")
    return net
