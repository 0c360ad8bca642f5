"""Layers with hand-written backward passes, float64 throughout.

``forward`` caches what ``backward`` needs; ``backward`` takes the upstream
gradient, accumulates parameter gradients into ``layer.grads`` and returns
the gradient with respect to the input.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import ShapeError


def glorot_uniform(rng: np.random.Generator, shape, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def sigmoid(z: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * z))


class Layer:
    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}

    def zero_grad(self) -> None:
        self.grads = {k: np.zeros_like(v) for k, v in self.params.items()}

    @property
    def n_params(self) -> int:
        return sum(p.size for p in self.params.values())


class Dense(Layer):
    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator | None = None):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        self.n_in, self.n_out = n_in, n_out
        self.params = {"W": glorot_uniform(rng, (n_out, n_in), n_in, n_out), "b": np.zeros(n_out)}
        self.zero_grad()

    def forward(self, x: np.ndarray) -> np.ndarray:
        if x.ndim != 2 or x.shape[1] != self.n_in:
            raise ShapeError("Dense input", (x.shape[0] if x.ndim else 0, self.n_in), x.shape)
        self._x = x
        return x @ self.params["W"].T + self.params["b"]

    def backward(self, dy: np.ndarray) -> np.ndarray:
        self.grads["W"] += dy.T @ self._x
        self.grads["b"] += dy.sum(0)
        return dy @ self.params["W"]


class ReLU(Layer):
    def forward(self, x):
        self._mask = x > 0
        return np.where(self._mask, x, 0.0)

    def backward(self, dy):
        return np.where(self._mask, dy, 0.0)


class Tanh(Layer):
    def forward(self, x):
        self._y = np.tanh(x)
        return self._y

    def backward(self, dy):
        return dy * (1.0 - self._y**2)


ACTIVATIONS = {"relu": ReLU, "tanh": Tanh}


def _patches(x: np.ndarray, kh: int, kw: int) -> np.ndarray:
    """(N, C, H, W) -> (Q, N, Ho, Wo) with Q ordered as (C, kh, kw)."""
    win = sliding_window_view(x, (kh, kw), axis=(2, 3))       # N, C, Ho, Wo, kh, kw
    N, C, Ho, Wo = win.shape[:4]
    return np.ascontiguousarray(win.transpose(1, 4, 5, 0, 2, 3)).reshape(C * kh * kw, N, Ho, Wo)


def _fold(dpatches: np.ndarray, x_shape, kh: int, kw: int) -> np.ndarray:
    """Adjoint of :func:`_patches`; ``dpatches`` is (N, Ho, Wo, Q)."""
    N, C, H, W = x_shape
    Ho, Wo = H - kh + 1, W - kw + 1
    d = dpatches.reshape(N, Ho, Wo, C, kh, kw)
    dx = np.zeros(x_shape)
    for i in range(kh):
        for j in range(kw):
            dx[:, :, i:i + Ho, j:j + Wo] += d[:, :, :, :, i, j].transpose(0, 3, 1, 2)
    return dx


def _weighted_sum(pq: np.ndarray, wq: np.ndarray, bias: np.ndarray) -> np.ndarray:
    # Shared by Conv2D and LocallyConnected2D so both accumulate in the same
    # order: equal weights give bit-identical outputs.
    out = pq[0][..., None] * wq[0]
    term = np.empty_like(out)
    for q in range(1, len(pq)):
        np.multiply(pq[q][..., None], wq[q], out=term)
        out += term
    out += bias
    return out.transpose(0, 3, 1, 2)


class _Spatial(Layer):
    def __init__(self, c_in: int, c_out: int, kh: int, kw: int):
        super().__init__()
        self.c_in, self.c_out, self.kh, self.kw = c_in, c_out, kh, kw

    def output_shape(self, h: int, w: int) -> tuple[int, int, int]:
        return self.c_out, h - self.kh + 1, w - self.kw + 1

    def _check(self, x):
        if x.ndim != 4 or x.shape[1] != self.c_in or x.shape[2] < self.kh or x.shape[3] < self.kw:
            raise ShapeError(type(self).__name__ + " input", ("N", self.c_in, ">=%d" % self.kh, ">=%d" % self.kw), x.shape)


class Conv2D(_Spatial):
    """Valid-padding, stride-1 convolution; kernels are (C_out, C_in, kh, kw)."""

    def __init__(self, c_in: int, c_out: int, kh: int, kw: int | None = None,
                 rng: np.random.Generator | None = None):
        kw = kh if kw is None else kw
        super().__init__(c_in, c_out, kh, kw)
        rng = rng if rng is not None else np.random.default_rng(0)
        self.params = {
            "W": glorot_uniform(rng, (c_out, c_in, kh, kw), c_in * kh * kw, c_out * kh * kw),
            "b": np.zeros(c_out),
        }
        self.zero_grad()

    def forward(self, x):
        self._check(x)
        self._shape = x.shape
        self._pq = _patches(x, self.kh, self.kw)
        wq = self.params["W"].reshape(self.c_out, -1).T
        return _weighted_sum(self._pq, wq, self.params["b"])

    def backward(self, dy):
        Q = self._pq.shape[0]
        dyt = dy.transpose(0, 2, 3, 1).reshape(-1, self.c_out)      # (N*Ho*Wo, C_out)
        P = self._pq.reshape(Q, -1)                                   # (Q, N*Ho*Wo)
        self.grads["W"] += (dyt.T @ P.T).reshape(self.params["W"].shape)
        self.grads["b"] += dyt.sum(0)
        N, _, Ho, Wo = dy.shape
        dpatch = (dyt @ self.params["W"].reshape(self.c_out, Q)).reshape(N, Ho, Wo, Q)
        return _fold(dpatch, self._shape, self.kh, self.kw)


class LocallyConnected2D(_Spatial):
    """Convolution-shaped connectivity with an independent kernel per output position.

    Kernels are (H_out, W_out, C_out, C_in, kh, kw) and biases (H_out, W_out, C_out).
    """

    def __init__(self, c_in: int, c_out: int, kh: int, kw: int | None, in_h: int, in_w: int,
                 rng: np.random.Generator | None = None):
        kw = kh if kw is None else kw
        super().__init__(c_in, c_out, kh, kw)
        rng = rng if rng is not None else np.random.default_rng(0)
        self.in_h, self.in_w = in_h, in_w
        _, ho, wo = self.output_shape(in_h, in_w)
        if ho < 1 or wo < 1:
            raise ShapeError("LocallyConnected2D kernel", (in_h, in_w), (kh, kw))
        self.params = {
            "W": glorot_uniform(rng, (ho, wo, c_out, c_in, kh, kw), c_in * kh * kw, c_out * kh * kw),
            "b": np.zeros((ho, wo, c_out)),
        }
        self.zero_grad()

    @classmethod
    def from_conv(cls, conv: Conv2D, in_h: int, in_w: int) -> "LocallyConnected2D":
        """An LCN whose every positional kernel is a copy of ``conv``'s shared kernel."""
        lcn = cls(conv.c_in, conv.c_out, conv.kh, conv.kw, in_h, in_w)
        lcn.load_shared(conv.params["W"], conv.params["b"])
        return lcn

    def load_shared(self, kernel: np.ndarray, bias: np.ndarray) -> None:
        self.params["W"][...] = kernel[None, None]
        self.params["b"][...] = bias[None, None]

    def forward(self, x):
        self._check(x)
        if x.shape[2:] != (self.in_h, self.in_w):
            raise ShapeError("LocallyConnected2D input", ("N", self.c_in, self.in_h, self.in_w), x.shape)
        self._shape = x.shape
        self._pq = _patches(x, self.kh, self.kw)
        ho, wo = self._pq.shape[2:]
        wq = np.ascontiguousarray(np.moveaxis(self.params["W"].reshape(ho, wo, self.c_out, -1), 3, 0))
        return _weighted_sum(self._pq, wq, self.params["b"])

    def backward(self, dy):
        Q, N, ho, wo = self._pq.shape
        npos = ho * wo
        dyp = np.ascontiguousarray(dy.reshape(N, self.c_out, npos).transpose(2, 1, 0))    # (pos, C_out, N)
        pp = np.ascontiguousarray(self._pq.reshape(Q, N, npos).transpose(2, 1, 0))        # (pos, N, Q)
        self.grads["W"] += (dyp @ pp).reshape(self.params["W"].shape)
        self.grads["b"] += dyp.sum(2).reshape(ho, wo, self.c_out)
        dpatch = np.ascontiguousarray(dyp.transpose(0, 2, 1)) @ self.params["W"].reshape(npos, self.c_out, Q)
        return _fold(dpatch.transpose(1, 0, 2).reshape(N, ho, wo, Q), self._shape, self.kh, self.kw)


class LSTMCell(Layer):
    """Single LSTM step; gate blocks in W, U, b are ordered input, forget, cell, output.

    Every ``forward`` pushes a cache entry and every ``backward`` pops the most
    recent one, so a sequence is unrolled by calling forward T times and then
    backward T times.
    """

    def __init__(self, n_in: int, hidden: int, rng: np.random.Generator | None = None,
                 forget_bias: float = 1.0):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        self.n_in, self.hidden = n_in, hidden
        b = np.zeros(4 * hidden)
        b[hidden:2 * hidden] = forget_bias
        self.params = {
            "W": glorot_uniform(rng, (4 * hidden, n_in), n_in, 4 * hidden),
            "U": glorot_uniform(rng, (4 * hidden, hidden), hidden, 4 * hidden),
            "b": b,
        }
        self.zero_grad()
        self._stack: list[tuple] = []

    def reset(self) -> None:
        self._stack.clear()

    def forward(self, x, h, c):
        if x.ndim != 2 or x.shape[1] != self.n_in:
            raise ShapeError("LSTMCell input", ("N", self.n_in), x.shape)
        if h.shape != (x.shape[0], self.hidden) or c.shape != h.shape:
            raise ShapeError("LSTMCell state", (x.shape[0], self.hidden), h.shape)
        H = self.hidden
        z = x @ self.params["W"].T + h @ self.params["U"].T + self.params["b"]
        i = sigmoid(z[:, :H])
        f = sigmoid(z[:, H:2 * H])
        g = np.tanh(z[:, 2 * H:3 * H])
        o = sigmoid(z[:, 3 * H:])
        c_new = f * c + i * g
        tc = np.tanh(c_new)
        h_new = o * tc
        self._stack.append((x, h, c, i, f, g, o, tc))
        return h_new, c_new

    def backward(self, dh, dc):
        x, h, c, i, f, g, o, tc = self._stack.pop()
        dc = dc + dh * o * (1.0 - tc**2)
        dz = np.concatenate([
            dc * g * i * (1.0 - i),
            dc * c * f * (1.0 - f),
            dc * i * (1.0 - g**2),
            dh * tc * o * (1.0 - o),
        ], axis=1)
        self.grads["W"] += dz.T @ x
        self.grads["U"] += dz.T @ h
        self.grads["b"] += dz.sum(0)
        return dz @ self.params["W"], dz @ self.params["U"], dc * f


def lstm_last_state(cell: LSTMCell, xs: np.ndarray) -> np.ndarray:
    """Run ``cell`` over xs (N, L, D) from a zero state and return the final hidden state."""
    N = xs.shape[0]
    h = np.zeros((N, cell.hidden))
    c = np.zeros_like(h)
    cell.reset()
    for t in range(xs.shape[1]):
        h, c = cell.forward(xs[:, t], h, c)
    return h


def lstm_last_state_backward(cell: LSTMCell, dh_last: np.ndarray, length: int) -> np.ndarray:
    """Backward of :func:`lstm_last_state`; returns d xs of shape (N, L, D)."""
    N = dh_last.shape[0]
    dxs = np.empty((N, length, cell.n_in))
    dh, dc = dh_last, np.zeros_like(dh_last)
    for t in reversed(range(length)):
        dxs[:, t], dh, dc = cell.backward(dh, dc)
    return dxs
