"""Layer set for the fixed-pipeline network engine.

Every layer caches what it needs during ``forward`` and implements the exact
reverse-mode ``backward``.  Shapes passed to ``build`` exclude the batch axis;
arrays passed to ``forward``/``backward`` carry it as axis 0.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class ShapeError(ValueError):
    """Raised when a layer receives an input of the wrong shape."""


class Layer:
    kind = "layer"

    def __init__(self) -> None:
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self.input_shape: tuple[int, ...] | None = None
        self.output_shape: tuple[int, ...] | None = None
        self._cache = None

    def config(self) -> dict:
        return {}

    def build(self, input_shape, rng: np.random.Generator, dtype) -> tuple[int, ...]:
        self.input_shape = tuple(input_shape)
        self.output_shape = self._output_shape(self.input_shape)
        self._init_params(rng, np.dtype(dtype))
        return self.output_shape

    def _output_shape(self, input_shape):
        return input_shape

    def _init_params(self, rng, dtype) -> None:
        pass

    def forward(self, x: np.ndarray, training: bool = False, rng=None) -> np.ndarray:
        raise NotImplementedError

    def backward(self, dy: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _need_cache(self):
        if self._cache is None:
            raise RuntimeError(f"{self.kind}: backward called without a recorded forward pass")
        return self._cache

    def __repr__(self) -> str:
        args = ", ".join(f"{k}={v}" for k, v in self.config().items())
        return f"{type(self).__name__}({args})"


def _he_uniform(rng, shape, fan_in, dtype):
    limit = np.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


def _same_pad(k: int) -> tuple[int, int]:
    total = k - 1
    return total // 2, total - total // 2


class Conv1D(Layer):
    """1-D convolution over ``(channels, length)`` inputs."""

    kind = "conv1d"

    def __init__(self, filters: int, kernel_size: int, padding: str = "valid") -> None:
        super().__init__()
        if filters < 1 or kernel_size < 1:
            raise ValueError("conv1d: filters and kernel_size must be positive")
        if padding not in ("valid", "same"):
            raise ValueError(f"conv1d: unknown padding {padding!r}")
        self.filters = filters
        self.kernel_size = kernel_size
        self.padding = padding

    def config(self):
        return {"filters": self.filters, "kernel_size": self.kernel_size, "padding": self.padding}

    def _output_shape(self, input_shape):
        if len(input_shape) != 2:
            raise ShapeError(f"conv1d expects (channels, length), got {input_shape}")
        _, length = input_shape
        if self.padding == "same":
            return (self.filters, length)
        out = length - self.kernel_size + 1
        if out < 1:
            raise ShapeError(f"conv1d: kernel {self.kernel_size} longer than input length {length}")
        return (self.filters, out)

    def _init_params(self, rng, dtype):
        channels = self.input_shape[0]
        fan_in = channels * self.kernel_size
        self.params["W"] = _he_uniform(rng, (self.filters, channels, self.kernel_size), fan_in, dtype)
        self.params["b"] = np.zeros(self.filters, dtype=dtype)

    def forward(self, x, training=False, rng=None):
        if self.padding == "same":
            x = np.pad(x, ((0, 0), (0, 0), _same_pad(self.kernel_size)))
        n, c, _ = x.shape
        k = self.kernel_size
        cols = sliding_window_view(x, k, axis=2)  # (N, C, Lout, K)
        lout = cols.shape[2]
        cols = cols.transpose(0, 2, 1, 3).reshape(n * lout, c * k)
        w = self.params["W"].reshape(self.filters, c * k)
        y = (cols @ w.T).reshape(n, lout, self.filters).transpose(0, 2, 1)
        y = y + self.params["b"][None, :, None]
        self._cache = (cols, x.shape)
        return y

    def backward(self, dy):
        cols, xshape = self._need_cache()
        n, c, length = xshape
        k = self.kernel_size
        lout = dy.shape[2]
        dyt = dy.transpose(0, 2, 1).reshape(n * lout, self.filters)
        self.grads["W"] = (dyt.T @ cols).reshape(self.params["W"].shape)
        self.grads["b"] = dy.sum(axis=(0, 2))
        dcols = (dyt @ self.params["W"].reshape(self.filters, c * k)).reshape(n, lout, c, k)
        dx = np.zeros(xshape, dtype=dy.dtype)
        for j in range(k):
            dx[:, :, j:j + lout] += dcols[:, :, :, j].transpose(0, 2, 1)
        if self.padding == "same":
            lo, hi = _same_pad(k)
            dx = dx[:, :, lo:length - hi]
        return dx


class Conv2D(Layer):
    """2-D convolution over ``(channels, height, width)`` inputs."""

    kind = "conv2d"

    def __init__(self, filters: int, kernel_size: int | tuple[int, int], padding: str = "valid") -> None:
        super().__init__()
        if isinstance(kernel_size, int):
            kernel_size = (kernel_size, kernel_size)
        if filters < 1 or min(kernel_size) < 1:
            raise ValueError("conv2d: filters and kernel_size must be positive")
        if padding not in ("valid", "same"):
            raise ValueError(f"conv2d: unknown padding {padding!r}")
        self.filters = filters
        self.kernel_size = tuple(kernel_size)
        self.padding = padding

    def config(self):
        return {"filters": self.filters, "kernel_size": list(self.kernel_size), "padding": self.padding}

    def _output_shape(self, input_shape):
        if len(input_shape) != 3:
            raise ShapeError(f"conv2d expects (channels, height, width), got {input_shape}")
        _, h, w = input_shape
        if self.padding == "same":
            return (self.filters, h, w)
        kh, kw = self.kernel_size
        ho, wo = h - kh + 1, w - kw + 1
        if ho < 1 or wo < 1:
            raise ShapeError(f"conv2d: kernel {self.kernel_size} larger than input {(h, w)}")
        return (self.filters, ho, wo)

    def _init_params(self, rng, dtype):
        channels = self.input_shape[0]
        kh, kw = self.kernel_size
        self.params["W"] = _he_uniform(rng, (self.filters, channels, kh, kw), channels * kh * kw, dtype)
        self.params["b"] = np.zeros(self.filters, dtype=dtype)

    def forward(self, x, training=False, rng=None):
        kh, kw = self.kernel_size
        if self.padding == "same":
            x = np.pad(x, ((0, 0), (0, 0), _same_pad(kh), _same_pad(kw)))
        n, c, _, _ = x.shape
        win = sliding_window_view(x, (kh, kw), axis=(2, 3))  # (N, C, Ho, Wo, kh, kw)
        ho, wo = win.shape[2], win.shape[3]
        cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, c * kh * kw)
        w = self.params["W"].reshape(self.filters, -1)
        y = (cols @ w.T).reshape(n, ho, wo, self.filters).transpose(0, 3, 1, 2)
        y = y + self.params["b"][None, :, None, None]
        self._cache = (cols, x.shape)
        return y

    def backward(self, dy):
        cols, xshape = self._need_cache()
        n, c, h, w = xshape
        kh, kw = self.kernel_size
        ho, wo = dy.shape[2], dy.shape[3]
        dyt = dy.transpose(0, 2, 3, 1).reshape(n * ho * wo, self.filters)
        self.grads["W"] = (dyt.T @ cols).reshape(self.params["W"].shape)
        self.grads["b"] = dy.sum(axis=(0, 2, 3))
        dcols = (dyt @ self.params["W"].reshape(self.filters, -1)).reshape(n, ho, wo, c, kh, kw)
        dx = np.zeros(xshape, dtype=dy.dtype)
        for i in range(kh):
            for j in range(kw):
                dx[:, :, i:i + ho, j:j + wo] += dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
        if self.padding == "same":
            (t, b), (l, r) = _same_pad(kh), _same_pad(kw)
            dx = dx[:, :, t:h - b, l:w - r]
        return dx


class InstanceNorm(Layer):
    """Per-sample normalization with a per-channel affine transform.

    Statistics are computed independently for every sample over ``axes``
    (default: every non-batch axis); batch statistics are never used.
    """

    kind = "instance_norm"

    def __init__(self, axes: tuple[int, ...] | None = None, eps: float = 1e-5) -> None:
        super().__init__()
        self.axes = None if axes is None else tuple(axes)
        self.eps = eps

    def config(self):
        return {"axes": None if self.axes is None else list(self.axes), "eps": self.eps}

    def _reduce_axes(self, ndim):
        if self.axes is None:
            return tuple(range(1, ndim))
        return tuple(a if a > 0 else ndim + a for a in self.axes)

    def _init_params(self, rng, dtype):
        channels = self.input_shape[0]
        self.params["gamma"] = np.ones(channels, dtype=dtype)
        self.params["beta"] = np.zeros(channels, dtype=dtype)

    def _bcast(self, p, ndim):
        return p.reshape((1, -1) + (1,) * (ndim - 2))

    def forward(self, x, training=False, rng=None):
        axes = self._reduce_axes(x.ndim)
        mean = x.mean(axis=axes, keepdims=True)
        xc = x - mean
        var = (xc * xc).mean(axis=axes, keepdims=True)
        inv_std = 1.0 / np.sqrt(var + self.eps)
        xhat = xc * inv_std
        self._cache = (xhat, inv_std, axes)
        return self._bcast(self.params["gamma"], x.ndim) * xhat + self._bcast(self.params["beta"], x.ndim)

    def backward(self, dy):
        xhat, inv_std, axes = self._need_cache()
        other = tuple(a for a in range(dy.ndim) if a != 1)
        self.grads["gamma"] = (dy * xhat).sum(axis=other)
        self.grads["beta"] = dy.sum(axis=other)
        dxhat = dy * self._bcast(self.params["gamma"], dy.ndim)
        m = np.prod([dy.shape[a] for a in axes])
        s1 = dxhat.sum(axis=axes, keepdims=True)
        s2 = (dxhat * xhat).sum(axis=axes, keepdims=True)
        return inv_std * (dxhat - s1 / m - xhat * s2 / m)


class ReLU(Layer):
    kind = "relu"

    def forward(self, x, training=False, rng=None):
        mask = x > 0
        self._cache = mask
        return x * mask

    def backward(self, dy):
        return dy * self._need_cache()


class Dropout(Layer):
    """Inverted dropout; identity outside training."""

    kind = "dropout"

    def __init__(self, rate: float) -> None:
        super().__init__()
        if not 0.0 <= rate < 1.0:
            raise ValueError(f"dropout rate must lie in [0, 1), got {rate}")
        self.rate = rate

    def config(self):
        return {"rate": self.rate}

    def forward(self, x, training=False, rng=None):
        if not training or self.rate == 0.0:
            self._cache = None
            self._eval = True
            return x
        if rng is None:
            raise ValueError("dropout in training mode needs a random generator")
        self._eval = False
        keep = (rng.random(x.shape) >= self.rate).astype(x.dtype) / (1.0 - self.rate)
        self._cache = keep
        return x * keep

    def backward(self, dy):
        if getattr(self, "_eval", None) is None:
            raise RuntimeError("dropout: backward called without a recorded forward pass")
        if self._eval:
            return dy
        return dy * self._cache


def _pool_window(size: int, k: int) -> int:
    # a dimension shorter than the kernel is pooled as a single window
    return min(k, size)


class MaxPool1D(Layer):
    kind = "maxpool"

    def __init__(self, pool_size: int = 2) -> None:
        super().__init__()
        if pool_size < 1:
            raise ValueError("maxpool: pool_size must be positive")
        self.pool_size = pool_size

    def config(self):
        return {"pool_size": self.pool_size}

    def _output_shape(self, input_shape):
        if len(input_shape) != 2:
            raise ShapeError(f"maxpool (1d) expects (channels, length), got {input_shape}")
        c, length = input_shape
        return (c, length // _pool_window(length, self.pool_size))

    def forward(self, x, training=False, rng=None):
        n, c, length = x.shape
        w = _pool_window(length, self.pool_size)
        lout = length // w
        xr = x[:, :, :lout * w].reshape(n, c, lout, w)
        idx = xr.argmax(axis=3)
        self._cache = (idx, x.shape, w)
        return np.take_along_axis(xr, idx[..., None], axis=3)[..., 0]

    def backward(self, dy):
        idx, xshape, w = self._need_cache()
        n, c, lout = dy.shape
        dxr = np.zeros((n, c, lout, w), dtype=dy.dtype)
        np.put_along_axis(dxr, idx[..., None], dy[..., None], axis=3)
        dx = np.zeros(xshape, dtype=dy.dtype)
        dx[:, :, :lout * w] = dxr.reshape(n, c, lout * w)
        return dx


class MaxPool2D(Layer):
    kind = "maxpool2d"

    def __init__(self, pool_size: int = 2) -> None:
        super().__init__()
        if pool_size < 1:
            raise ValueError("maxpool: pool_size must be positive")
        self.pool_size = pool_size

    def config(self):
        return {"pool_size": self.pool_size}

    def _output_shape(self, input_shape):
        if len(input_shape) != 3:
            raise ShapeError(f"maxpool (2d) expects (channels, height, width), got {input_shape}")
        c, h, w = input_shape
        return (c, h // _pool_window(h, self.pool_size), w // _pool_window(w, self.pool_size))

    def forward(self, x, training=False, rng=None):
        n, c, h, w = x.shape
        ph, pw = _pool_window(h, self.pool_size), _pool_window(w, self.pool_size)
        ho, wo = h // ph, w // pw
        xr = x[:, :, :ho * ph, :wo * pw].reshape(n, c, ho, ph, wo, pw)
        xr = xr.transpose(0, 1, 2, 4, 3, 5).reshape(n, c, ho, wo, ph * pw)
        idx = xr.argmax(axis=4)
        self._cache = (idx, x.shape, ph, pw)
        return np.take_along_axis(xr, idx[..., None], axis=4)[..., 0]

    def backward(self, dy):
        idx, xshape, ph, pw = self._need_cache()
        n, c, ho, wo = dy.shape
        dxr = np.zeros((n, c, ho, wo, ph * pw), dtype=dy.dtype)
        np.put_along_axis(dxr, idx[..., None], dy[..., None], axis=4)
        dxr = dxr.reshape(n, c, ho, wo, ph, pw).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, ho * ph, wo * pw)
        dx = np.zeros(xshape, dtype=dy.dtype)
        dx[:, :, :ho * ph, :wo * pw] = dxr
        return dx


class Flatten(Layer):
    """Flatten to a vector, or to a sequence when ``time_axis`` is given.

    With ``time_axis`` set (an index into the un-batched shape), that axis
    becomes the sequence axis and all remaining axes are flattened per step.
    """

    kind = "flatten"

    def __init__(self, time_axis: int | None = None) -> None:
        super().__init__()
        self.time_axis = time_axis

    def config(self):
        return {"time_axis": self.time_axis}

    def _output_shape(self, input_shape):
        if self.time_axis is None:
            return (int(np.prod(input_shape)),)
        t = input_shape[self.time_axis]
        return (t, int(np.prod(input_shape)) // t)

    def forward(self, x, training=False, rng=None):
        self._cache = x.shape
        if self.time_axis is None:
            return x.reshape(x.shape[0], -1)
        moved = np.moveaxis(x, self.time_axis + 1, 1)
        self._cache = (x.shape, moved.shape)
        return moved.reshape(x.shape[0], moved.shape[1], -1)

    def backward(self, dy):
        cache = self._need_cache()
        if self.time_axis is None:
            return dy.reshape(cache)
        xshape, moved_shape = cache
        return np.moveaxis(dy.reshape(moved_shape), 1, self.time_axis + 1)


class Dense(Layer):
    kind = "dense"

    def __init__(self, units: int) -> None:
        super().__init__()
        if units < 1:
            raise ValueError("dense: units must be positive")
        self.units = units

    def config(self):
        return {"units": self.units}

    def _output_shape(self, input_shape):
        if len(input_shape) != 1:
            raise ShapeError(f"dense expects a flat input, got {input_shape}")
        return (self.units,)

    def _init_params(self, rng, dtype):
        fan_in = self.input_shape[0]
        self.params["W"] = _he_uniform(rng, (fan_in, self.units), fan_in, dtype)
        self.params["b"] = np.zeros(self.units, dtype=dtype)

    def forward(self, x, training=False, rng=None):
        self._cache = x
        return x @ self.params["W"] + self.params["b"]

    def backward(self, dy):
        x = self._need_cache()
        self.grads["W"] = x.T @ dy
        self.grads["b"] = dy.sum(axis=0)
        return dy @ self.params["W"].T


def _sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


class Sigmoid(Layer):
    kind = "sigmoid"

    def forward(self, x, training=False, rng=None):
        y = _sigmoid(x)
        self._cache = y
        return y

    def backward(self, dy):
        y = self._need_cache()
        return dy * y * (1.0 - y)


class LSTM(Layer):
    """Single-layer LSTM over ``(time, features)``, returning the last hidden state.

    Gate order in the packed weights is input, forget, cell, output.
    """

    kind = "lstm"

    def __init__(self, units: int) -> None:
        super().__init__()
        if units < 1:
            raise ValueError("lstm: units must be positive")
        self.units = units

    def config(self):
        return {"units": self.units}

    def _output_shape(self, input_shape):
        if len(input_shape) != 2:
            raise ShapeError(f"lstm expects (time, features), got {input_shape}")
        return (self.units,)

    def _init_params(self, rng, dtype):
        d = self.input_shape[1]
        u = self.units
        limit = 1.0 / np.sqrt(u)
        self.params["W"] = rng.uniform(-limit, limit, size=(d, 4 * u)).astype(dtype)
        self.params["U"] = rng.uniform(-limit, limit, size=(u, 4 * u)).astype(dtype)
        b = np.zeros(4 * u, dtype=dtype)
        b[u:2 * u] = 1.0  # forget-gate bias
        self.params["b"] = b

    def forward(self, x, training=False, rng=None):
        n, steps, _ = x.shape
        u = self.units
        W, U, b = self.params["W"], self.params["U"], self.params["b"]
        h = np.zeros((n, u), dtype=x.dtype)
        c = np.zeros((n, u), dtype=x.dtype)
        xw = x @ W + b  # (N, T, 4U)
        tape = []
        for t in range(steps):
            z = xw[:, t] + h @ U
            i = _sigmoid(z[:, :u])
            f = _sigmoid(z[:, u:2 * u])
            g = np.tanh(z[:, 2 * u:3 * u])
            o = _sigmoid(z[:, 3 * u:])
            c_prev, h_prev = c, h
            c = f * c_prev + i * g
            tc = np.tanh(c)
            h = o * tc
            tape.append((i, f, g, o, c_prev, h_prev, tc))
        self._cache = (x, tape)
        return h

    def backward(self, dy):
        x, tape = self._need_cache()
        u = self.units
        W, U = self.params["W"], self.params["U"]
        dW = np.zeros_like(W)
        dU = np.zeros_like(U)
        db = np.zeros_like(self.params["b"])
        dx = np.zeros_like(x)
        dh = dy
        dc = np.zeros_like(dy)
        for t in range(x.shape[1] - 1, -1, -1):
            i, f, g, o, c_prev, h_prev, tc = tape[t]
            do = dh * tc
            dc = dc + dh * o * (1.0 - tc * tc)
            dz = np.concatenate(
                [dc * g * i * (1.0 - i), dc * c_prev * f * (1.0 - f), dc * i * (1.0 - g * g), do * o * (1.0 - o)],
                axis=1,
            )
            dW += x[:, t].T @ dz
            dU += h_prev.T @ dz
            db += dz.sum(axis=0)
            dx[:, t] = dz @ W.T
            dh = dz @ U.T
            dc = dc * f
        self.grads.update(W=dW, U=dU, b=db)
        return dx


LAYER_KINDS: dict[str, type[Layer]] = {
    cls.kind: cls
    for cls in (Conv1D, Conv2D, InstanceNorm, ReLU, Dropout, MaxPool1D, MaxPool2D, Flatten, Dense, Sigmoid, LSTM)
}


def layer_from_config(kind: str, config: dict) -> Layer:
    try:
        cls = LAYER_KINDS[kind]
    except KeyError:
        raise ValueError(f"unknown layer kind {kind!r}") from None
    config = dict(config)
    if kind == "instance_norm" and config.get("axes") is not None:
        config["axes"] = tuple(config["axes"])
    if kind == "conv2d":
        config["kernel_size"] = tuple(config["kernel_size"])
    return cls(**config)
