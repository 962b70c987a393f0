"""Small fully connected ReLU regressors trained with Adam.

Inputs and targets are standardized with statistics of the training split;
the statistics travel with the network and are applied inside
:meth:`MlpNetwork.forward`, so callers always work in physical units.
"""
from __future__ import annotations

import struct
import warnings
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

TRANSFER_LAYERS = (3, 10, 10, 5, 1)
MAGIC = b"SIGMLP1"


class DimensionMismatch(ValueError):
    pass


class FormatVersionMismatch(ValueError):
    pass


class CorruptModel(ValueError):
    pass


class DegenerateData(UserWarning):
    """All training targets are identical; a constant predictor is returned."""


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 2000
    batch_size: int = 64
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    validation_fraction: float = 0.1
    seed: int = 0
    # cosine decay of the step size down to this fraction of learning_rate
    final_lr_fraction: float = 0.01

    def __post_init__(self):
        if not 0 < self.validation_fraction < 1:
            raise ValueError("validation_fraction must lie in (0, 1)")
        if self.epochs < 1 or self.batch_size < 1 or not self.learning_rate > 0:
            raise ValueError("epochs, batch_size and learning_rate must be positive")


def _shapes(sizes):
    return [(sizes[i], sizes[i + 1]) for i in range(len(sizes) - 1)]


class MlpNetwork:
    """ReLU hidden layers, identity output, scalar prediction."""

    def __init__(self, layer_sizes, params=None, x_mean=None, x_scale=None,
                 y_mean: float = 0.0, y_scale: float = 1.0):
        sizes = tuple(int(s) for s in layer_sizes)
        if len(sizes) < 2 or sizes[-1] != 1 or min(sizes) < 1:
            raise DimensionMismatch(f"invalid layer sizes {sizes}")
        self.layer_sizes = sizes
        n = sum(i * o + o for i, o in _shapes(sizes))
        self.params = np.zeros(n) if params is None else np.array(params, dtype=float)
        if self.params.shape != (n,):
            raise DimensionMismatch(f"expected {n} parameters, got {self.params.shape}")
        if not np.all(np.isfinite(self.params)):
            raise ValueError("non-finite weights")
        self.x_mean = np.zeros(sizes[0]) if x_mean is None else np.array(x_mean, dtype=float)
        self.x_scale = np.ones(sizes[0]) if x_scale is None else np.array(x_scale, dtype=float)
        if self.x_mean.shape != (sizes[0],) or self.x_scale.shape != (sizes[0],):
            raise DimensionMismatch("normalization vectors do not match the input size")
        self.y_mean = float(y_mean)
        self.y_scale = float(y_scale)
        self.train_loss: float | None = None
        self.val_loss: float | None = None
        self.history: list[float] = []
        self._bind()

    def _bind(self):
        self.weights, self.biases = [], []
        pos = 0
        for i, o in _shapes(self.layer_sizes):
            self.weights.append(self.params[pos:pos + i * o].reshape(i, o))
            pos += i * o
            self.biases.append(self.params[pos:pos + o])
            pos += o

    @property
    def n_inputs(self) -> int:
        return self.layer_sizes[0]

    @classmethod
    def random(cls, layer_sizes=TRANSFER_LAYERS, seed: int = 0) -> MlpNetwork:
        """He-initialized weights, zero biases."""
        net = cls(layer_sizes)
        rng = np.random.default_rng(seed)
        for W in net.weights:
            W[...] = rng.normal(0.0, np.sqrt(2.0 / W.shape[0]), size=W.shape)
        return net

    def _raw(self, Z: np.ndarray) -> np.ndarray:
        h = Z
        last = len(self.weights) - 1
        for li, (W, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ W + b
            if li != last:
                h = np.maximum(h, 0.0)
        return h[:, 0]

    def predict(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[1] != self.n_inputs:
            raise DimensionMismatch(f"expected (n, {self.n_inputs}) inputs, got {X.shape}")
        return self._raw((X - self.x_mean) / self.x_scale) * self.y_scale + self.y_mean

    def forward(self, x) -> float:
        x = np.asarray(x, dtype=float)
        if x.shape != (self.n_inputs,):
            raise DimensionMismatch(f"expected {self.n_inputs} features, got shape {x.shape}")
        return float(self.predict(x[None, :])[0])

    def loss_and_grad(self, Z: np.ndarray, t: np.ndarray) -> tuple[float, np.ndarray]:
        """Mean squared error on normalized data and its gradient w.r.t. ``params``."""
        hs = [Z]
        zs = []
        h = Z
        last = len(self.weights) - 1
        for li, (W, b) in enumerate(zip(self.weights, self.biases)):
            z = h @ W + b
            zs.append(z)
            h = np.maximum(z, 0.0) if li != last else z
            hs.append(h)
        err = h[:, 0] - t
        m = t.size
        loss = float(err @ err) / m
        grad = np.empty_like(self.params)
        gW, gb = self._grad_views(grad)
        dz = (2.0 / m) * err[:, None]
        for li in range(last, -1, -1):
            gW[li][...] = hs[li].T @ dz
            gb[li][...] = dz.sum(axis=0)
            if li:
                dz = (dz @ self.weights[li].T) * (zs[li - 1] > 0.0)
        return loss, grad

    def _grad_views(self, grad):
        gW, gb = [], []
        pos = 0
        for i, o in _shapes(self.layer_sizes):
            gW.append(grad[pos:pos + i * o].reshape(i, o))
            pos += i * o
            gb.append(grad[pos:pos + o])
            pos += o
        return gW, gb


def train(data, cfg: TrainConfig = TrainConfig(), layer_sizes=None) -> MlpNetwork:
    """Fit a network to ``(features, target)`` pairs by mini-batch Adam on MSE.

    ``data`` is either a sequence of pairs or a tuple ``(X, y)`` of arrays.
    The split, initialization and batch order are all drawn from
    ``cfg.seed``, so equal inputs give bit-identical weights.
    """
    if isinstance(data, tuple) and len(data) == 2 and isinstance(data[0], np.ndarray):
        X, y = data
    else:
        X = np.array([f for f, _ in data], dtype=float)
        y = np.array([t for _, t in data], dtype=float)
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float).ravel()
    if X.ndim != 2 or X.shape[0] != y.size:
        raise DimensionMismatch("features and targets disagree in length")
    if y.size < 10:
        raise ValueError("need at least 10 samples")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
        raise ValueError("non-finite training data")
    sizes = tuple(layer_sizes) if layer_sizes else (X.shape[1],) + TRANSFER_LAYERS[1:]
    if sizes[0] != X.shape[1]:
        raise DimensionMismatch("layer_sizes[0] does not match the feature count")

    if np.ptp(y) <= 1e-12:
        warnings.warn("constant targets; returning a constant predictor", DegenerateData, stacklevel=2)
        net = MlpNetwork(sizes, y_mean=float(y[0]))
        net.train_loss = net.val_loss = 0.0
        return net

    rng = np.random.default_rng(cfg.seed)
    perm = rng.permutation(y.size)
    n_val = max(1, int(round(cfg.validation_fraction * y.size)))
    vi, ti = perm[:n_val], perm[n_val:]
    Xt, yt = X[ti], y[ti]
    x_mean = Xt.mean(axis=0)
    x_scale = Xt.std(axis=0)
    x_scale[x_scale == 0] = 1.0
    y_mean = float(yt.mean())
    y_scale = float(yt.std()) or 1.0

    net = MlpNetwork.random(sizes, seed=int(rng.integers(2**31)))
    net.x_mean, net.x_scale, net.y_mean, net.y_scale = x_mean, x_scale, y_mean, y_scale
    Zt = (Xt - x_mean) / x_scale
    tt = (yt - y_mean) / y_scale

    m = np.zeros_like(net.params)
    v = np.zeros_like(net.params)
    b1, b2, eps = cfg.beta1, cfg.beta2, cfg.adam_eps
    step = 0
    n = tt.size
    for epoch in range(cfg.epochs):
        frac = cfg.final_lr_fraction
        lr = cfg.learning_rate * (frac + (1 - frac) * 0.5 * (1 + np.cos(np.pi * epoch / cfg.epochs)))
        order = rng.permutation(n)
        for s in range(0, n, cfg.batch_size):
            idx = order[s:s + cfg.batch_size]
            _, g = net.loss_and_grad(Zt[idx], tt[idx])
            step += 1
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            mhat = m / (1 - b1 ** step)
            vhat = v / (1 - b2 ** step)
            net.params -= lr * mhat / (np.sqrt(vhat) + eps)
        r = net._raw(Zt) - tt
        net.history.append(float(r @ r) / n * y_scale**2)

    net.train_loss = net.history[-1]
    rv = net.predict(X[vi]) - y[vi]
    net.val_loss = float(rv @ rv) / rv.size
    return net


# -- model file -------------------------------------------------------------

def dumps_model(net: MlpNetwork) -> bytes:
    sizes = net.layer_sizes
    body = bytearray(MAGIC)
    body += struct.pack(f"<I{len(sizes)}I", len(sizes), *sizes)
    for W, b in zip(net.weights, net.biases):
        body += np.ascontiguousarray(W, dtype="<f8").tobytes()
        body += np.asarray(b, dtype="<f8").tobytes()
    body += np.asarray(net.x_mean, dtype="<f8").tobytes()
    body += np.asarray(net.x_scale, dtype="<f8").tobytes()
    body += struct.pack("<2d", net.y_mean, net.y_scale)
    body += struct.pack("<I", zlib.crc32(body))
    return bytes(body)


def loads_model(data: bytes) -> MlpNetwork:
    if len(data) < len(MAGIC) or data[:len(MAGIC)] != MAGIC:
        if data[:len(MAGIC) - 1] == MAGIC[:-1]:
            raise FormatVersionMismatch(f"unsupported model version {data[len(MAGIC) - 1:len(MAGIC)]!r}")
        raise CorruptModel("not a model file")
    if len(data) < len(MAGIC) + 8:
        raise CorruptModel("truncated model file")
    body, (crc,) = data[:-4], struct.unpack("<I", data[-4:])
    if zlib.crc32(body) != crc:
        raise CorruptModel("checksum mismatch")
    pos = len(MAGIC)
    (count,) = struct.unpack_from("<I", body, pos)
    pos += 4
    if count < 2 or count > 64:
        raise CorruptModel("bad layer count")
    sizes = struct.unpack_from(f"<{count}I", body, pos)
    pos += 4 * count
    n_par = sum(i * o + o for i, o in _shapes(sizes))
    need = pos + 8 * (n_par + 2 * sizes[0] + 2)
    if len(body) != need:
        raise CorruptModel("payload size does not match layer sizes")
    vals = np.frombuffer(body, dtype="<f8", offset=pos).astype(float)
    params = vals[:n_par]
    x_mean = vals[n_par:n_par + sizes[0]]
    x_scale = vals[n_par + sizes[0]:n_par + 2 * sizes[0]]
    y_mean, y_scale = vals[-2:]
    return MlpNetwork(sizes, params, x_mean, x_scale, y_mean, y_scale)


def save_model(net: MlpNetwork, path) -> None:
    Path(path).write_bytes(dumps_model(net))


def load_model(path) -> MlpNetwork:
    return loads_model(Path(path).read_bytes())
