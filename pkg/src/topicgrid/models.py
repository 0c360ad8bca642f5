"""Next-frame predictors over sequences of k x k metric frames.

Architectures (input is (N, T, k, k), output (N, k, k)):

mlp   all T frames flattened into one vector -> dense stack -> k*k
tdrn  each frame scanned cell by cell (row-major) by a spatial LSTM; its
      final state embeds the period; a temporal LSTM runs over the T
      embeddings; dense readout of its final state
lrcn  per-frame conv stack (shared over periods) -> flatten -> temporal
      LSTM -> dense readout
sccn  lrcn with every conv layer replaced by a locally connected layer
"""

from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, NumericalError, ShapeError
from .layout import GridAssignment, apply_assignment, invert_assignment
from .metrics import MetricSeries
from .neurons import (
    ACTIVATIONS, Adam, Conv2D, Dense, LocallyConnected2D, LSTMCell, LOSSES,
    load_params, lstm_last_state, lstm_last_state_backward, restore_into, save_params,
)

ARCHITECTURES = ("mlp", "tdrn", "lrcn", "sccn")


@dataclass
class ModelConfig:
    arch: str = "mlp"
    k: int = 8
    T: int = 8
    dense_widths: tuple[int, ...] = (256, 64)
    lstm_width: int = 64
    spatial_width: int | None = None    # tdrn spatial LSTM; defaults to lstm_width
    channels: int = 8
    kernel: int = 3
    conv_layers: int = 2
    activation: str = "relu"
    l2: float = 1e-4
    seed: int = 0

    def __post_init__(self):
        self.dense_widths = tuple(self.dense_widths)
        if self.arch not in ARCHITECTURES:
            raise ConfigError(f"unknown architecture {self.arch!r}; expected one of {ARCHITECTURES}")
        if self.activation not in ACTIVATIONS:
            raise ConfigError(f"unknown activation {self.activation!r}")
        sizes = [self.k, self.T, self.lstm_width, self.channels, self.kernel, self.conv_layers, *self.dense_widths]
        if self.spatial_width is not None:
            sizes.append(self.spatial_width)
        if min(sizes) < 1:
            raise ConfigError("all model sizes must be positive")
        if self.arch in ("lrcn", "sccn") and self.k - self.conv_layers * (self.kernel - 1) < 1:
            raise ConfigError(f"{self.conv_layers} layers of {self.kernel}x{self.kernel} kernels do not fit a {self.k}x{self.k} frame")
        if self.l2 < 0:
            raise ConfigError("l2 must be non-negative")

    def with_arch(self, arch: str) -> "ModelConfig":
        d = asdict(self)
        d["arch"] = arch
        return ModelConfig(**d)


class Model:
    """A stack of named layers with a hand-written forward/backward pair."""

    def __init__(self, cfg: ModelConfig):
        self.cfg = cfg
        self.layers: dict[str, object] = {}

    def parameters(self) -> dict[str, np.ndarray]:
        return {f"{n}.{p}": v for n, layer in self.layers.items() for p, v in layer.params.items()}

    def gradients(self) -> dict[str, np.ndarray]:
        return {f"{n}.{p}": v for n, layer in self.layers.items() for p, v in layer.grads.items()}

    def zero_grad(self) -> None:
        for layer in self.layers.values():
            layer.zero_grad()

    @property
    def n_params(self) -> int:
        return sum(v.size for v in self.parameters().values())

    def weight_names(self) -> list[str]:
        """Parameters subject to the L2 penalty (everything except biases)."""
        return [n for n in self.parameters() if not n.endswith(".b")]

    def _check_input(self, x: np.ndarray) -> None:
        k, T = self.cfg.k, self.cfg.T
        if x.ndim != 4 or x.shape[1:] != (T, k, k):
            raise ShapeError(f"{self.cfg.arch} input", ("N", T, k, k), x.shape)

    def forward(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def backward(self, dy: np.ndarray) -> None:
        raise NotImplementedError

    def save(self, directory: str | Path, step_count: int = 0) -> None:
        directory = Path(directory)
        layers = [{"name": n, "type": type(l).__name__} for n, l in self.layers.items()]
        save_params(directory, self.parameters(), layers=layers, seed=self.cfg.seed, step_count=step_count)
        (directory / "model_config.json").write_text(json.dumps(asdict(self.cfg), indent=2, sort_keys=True) + "\n")


class _Sequential:
    """Apply a list of layers in order; backward runs them in reverse."""

    def __init__(self, layers: list):
        self.layers = layers

    def forward(self, x):
        for layer in self.layers:
            x = layer.forward(x)
        return x

    def backward(self, dy):
        for layer in reversed(self.layers):
            dy = layer.backward(dy)
        return dy


class MLP(Model):
    def __init__(self, cfg: ModelConfig):
        super().__init__(cfg)
        rng = np.random.default_rng(cfg.seed)
        Act = ACTIVATIONS[cfg.activation]
        widths = [cfg.T * cfg.k * cfg.k, *cfg.dense_widths]
        chain = []
        for i in range(len(widths) - 1):
            dense = Dense(widths[i], widths[i + 1], rng)
            self.layers[f"dense{i}"] = dense
            chain += [dense, Act()]
        readout = Dense(widths[-1], cfg.k * cfg.k, rng)
        self.layers["readout"] = readout
        self._net = _Sequential(chain + [readout])

    @property
    def input_width(self) -> int:
        return self.cfg.T * self.cfg.k * self.cfg.k

    def forward(self, x):
        self._check_input(x)
        N, k = x.shape[0], self.cfg.k
        return self._net.forward(x.reshape(N, -1)).reshape(N, k, k)

    def backward(self, dy):
        self._net.backward(dy.reshape(dy.shape[0], -1))


class TDRN(Model):
    def __init__(self, cfg: ModelConfig):
        super().__init__(cfg)
        rng = np.random.default_rng(cfg.seed)
        sw = cfg.spatial_width or cfg.lstm_width
        self.spatial = LSTMCell(1, sw, rng)
        self.temporal = LSTMCell(sw, cfg.lstm_width, rng)
        self.readout = Dense(cfg.lstm_width, cfg.k * cfg.k, rng)
        self.layers = {"lstm_spatial": self.spatial, "lstm_temporal": self.temporal, "readout": self.readout}

    def forward(self, x):
        self._check_input(x)
        N, T, k = x.shape[0], self.cfg.T, self.cfg.k
        cells = x.reshape(N * T, k * k, 1)
        emb = lstm_last_state(self.spatial, cells).reshape(N, T, -1)
        h = lstm_last_state(self.temporal, emb)
        return self.readout.forward(h).reshape(N, k, k)

    def backward(self, dy):
        N, T, k = dy.shape[0], self.cfg.T, self.cfg.k
        dh = self.readout.backward(dy.reshape(N, -1))
        demb = lstm_last_state_backward(self.temporal, dh, T)
        lstm_last_state_backward(self.spatial, demb.reshape(N * T, -1), k * k)


class _ConvRecurrent(Model):
    """Shared per-frame spatial stack feeding a temporal LSTM."""

    def _spatial_layer(self, c_in, size, rng):
        raise NotImplementedError

    def __init__(self, cfg: ModelConfig):
        super().__init__(cfg)
        rng = np.random.default_rng(cfg.seed)
        Act = ACTIVATIONS[cfg.activation]
        chain, c_in, size = [], 1, cfg.k
        self.spatial_layers = []
        for i in range(cfg.conv_layers):
            layer = self._spatial_layer(c_in, size, rng)
            self.layers[f"spatial{i}"] = layer
            self.spatial_layers.append(layer)
            chain += [layer, Act()]
            c_in, size = cfg.channels, size - cfg.kernel + 1
        self.feature_shape = (c_in, size, size)
        self.stack = _Sequential(chain)
        self.temporal = LSTMCell(c_in * size * size, cfg.lstm_width, rng)
        self.readout = Dense(cfg.lstm_width, cfg.k * cfg.k, rng)
        self.layers["lstm_temporal"] = self.temporal
        self.layers["readout"] = self.readout

    def stage_shapes(self, n: int = 1) -> list[tuple[int, ...]]:
        """Output shape after each spatial layer for a batch of ``n`` frames."""
        shapes, size = [], self.cfg.k
        for _ in self.spatial_layers:
            size = size - self.cfg.kernel + 1
            shapes.append((n, self.cfg.channels, size, size))
        return shapes

    def forward(self, x):
        self._check_input(x)
        N, T, k = x.shape[0], self.cfg.T, self.cfg.k
        feats = self.stack.forward(x.reshape(N * T, 1, k, k))
        h = lstm_last_state(self.temporal, feats.reshape(N, T, -1))
        return self.readout.forward(h).reshape(N, k, k)

    def backward(self, dy):
        N, T = dy.shape[0], self.cfg.T
        dh = self.readout.backward(dy.reshape(N, -1))
        dfeats = lstm_last_state_backward(self.temporal, dh, T)
        self.stack.backward(dfeats.reshape((N * T,) + self.feature_shape))


class LRCN(_ConvRecurrent):
    def _spatial_layer(self, c_in, size, rng):
        return Conv2D(c_in, self.cfg.channels, self.cfg.kernel, self.cfg.kernel, rng)


class SCCN(_ConvRecurrent):
    def _spatial_layer(self, c_in, size, rng):
        return LocallyConnected2D(c_in, self.cfg.channels, self.cfg.kernel, self.cfg.kernel, size, size, rng)

    @classmethod
    def from_lrcn(cls, lrcn: LRCN) -> "SCCN":
        """SCCN whose positional kernels all copy ``lrcn``'s shared kernels; other weights equal."""
        model = cls(lrcn.cfg.with_arch("sccn"))
        for name, src in lrcn.layers.items():
            dst = model.layers[name]
            if isinstance(src, Conv2D):
                dst.load_shared(src.params["W"], src.params["b"])
            else:
                for p, v in src.params.items():
                    dst.params[p][...] = v
        return model


_BUILDERS = {"mlp": MLP, "tdrn": TDRN, "lrcn": LRCN, "sccn": SCCN}


def build_model(cfg: ModelConfig) -> Model:
    if cfg.arch not in _BUILDERS:
        raise ConfigError(f"unknown architecture {cfg.arch!r}")
    return _BUILDERS[cfg.arch](cfg)


def load_model(directory: str | Path) -> tuple[Model, dict]:
    directory = Path(directory)
    cfg = ModelConfig(**json.loads((directory / "model_config.json").read_text()))
    model = build_model(cfg)
    params, manifest = load_params(directory)
    restore_into(model.parameters(), params)
    return model, manifest


def forward_sequence(model: Model, frames: np.ndarray) -> np.ndarray:
    """Predict the next frame for one sample (T, k, k) or a batch (N, T, k, k)."""
    frames = np.asarray(frames, dtype=float)
    if frames.ndim == 3:
        return model.forward(frames[None])[0]
    return model.forward(frames)


def predict_batched(model: Model, X: np.ndarray, batch_size: int = 256) -> np.ndarray:
    out = np.empty((len(X), model.cfg.k, model.cfg.k))
    for s in range(0, len(X), batch_size):
        out[s:s + batch_size] = model.forward(X[s:s + batch_size])
    return out


def objective(model: Model, X: np.ndarray, Y: np.ndarray, loss: str = "rle",
              l2: float | None = None) -> tuple[float, float]:
    """Forward + backward for one batch. Gradients are accumulated into the layers.

    Returns (data loss, total loss including the L2 penalty).
    """
    l2 = model.cfg.l2 if l2 is None else l2
    pred = model.forward(X)
    value, dpred = LOSSES[loss](pred, Y)
    model.backward(dpred)
    total = value
    if l2:
        params, grads = model.parameters(), model.gradients()
        for name in model.weight_names():
            w = params[name]
            total += l2 * float(np.sum(w * w))
            grads[name] += 2.0 * l2 * w
    return value, total


@dataclass
class EpochReport:
    epoch: int
    mean_loss: float
    seconds: float
    batches: int = 0
    losses: list[float] = field(default_factory=list, repr=False)


def train_epoch(
    model: Model,
    X: np.ndarray,
    Y: np.ndarray,
    optimizer: Adam,
    epoch: int = 0,
    batch_size: int = 32,
    loss: str = "rle",
    seed: int | None = None,
) -> EpochReport:
    """One pass over (X, Y) in epoch-seeded shuffled order.

    ``mean_loss`` averages the pre-update data loss of every batch.
    """
    if len(X) == 0:
        raise ConfigError("train_epoch needs at least one sample")
    seed = model.cfg.seed if seed is None else seed
    order = np.random.default_rng([seed, epoch]).permutation(len(X))
    start = time.perf_counter()
    losses = []
    for s in range(0, len(X), batch_size):
        idx = order[s:s + batch_size]
        model.zero_grad()
        value, total = objective(model, X[idx], Y[idx], loss)
        if not np.isfinite(total):
            raise NumericalError(
                f"non-finite {loss} loss ({total}) in epoch {epoch}, batch {s // batch_size} of {model.cfg.arch}"
            )
        optimizer.step(model.parameters(), model.gradients())
        losses.append(value)
    return EpochReport(epoch, float(np.mean(losses)), time.perf_counter() - start, len(losses), losses)


def predict(model: Model, series: MetricSeries | np.ndarray, assignment: GridAssignment) -> tuple[np.ndarray, np.ndarray]:
    """Predict the frame after the end of ``series`` from its last T periods.

    Returns (frame, topic vector recovered through the inverse assignment).
    """
    values = series.values if isinstance(series, MetricSeries) else np.asarray(series, dtype=float)
    T = model.cfg.T
    if len(values) < T:
        raise ConfigError(f"series has {len(values)} periods, model needs {T}")
    if assignment.k != model.cfg.k:
        raise ConfigError(f"assignment grid {assignment.k} != model grid {model.cfg.k}")
    frames = apply_assignment(values[-T:], assignment)
    frame = forward_sequence(model, frames)
    return frame, invert_assignment(frame, assignment)
