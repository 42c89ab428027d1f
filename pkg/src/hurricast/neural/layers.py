"""From-scratch differentiable layers over float64 numpy arrays.

Every layer caches what its backward pass needs during forward and
accumulates parameter gradients into Parameter.grad. Kernel matrices are
flagged penalized=True so the L2 term covers them; biases and normalization
parameters are excluded from the penalty.
"""

from __future__ import annotations

import math

import numpy as np

from ..errors import DimensionError


class Parameter:
    __slots__ = ("name", "value", "grad", "penalized")

    def __init__(self, name: str, value: np.ndarray, penalized: bool):
        self.name = name
        self.value = np.asarray(value, dtype=float)
        self.grad = np.zeros_like(self.value)
        self.penalized = penalized


class Layer:
    def params(self) -> list[Parameter]:
        return []

    def forward(self, x: np.ndarray, train: bool = True) -> np.ndarray:
        raise NotImplementedError

    def backward(self, dout: np.ndarray) -> np.ndarray:
        raise NotImplementedError


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _uniform_fan_in(rng: np.random.Generator, fan_in: int, shape) -> np.ndarray:
    limit = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-limit, limit, size=shape)


def _orthogonal(rng: np.random.Generator, rows: int, cols: int) -> np.ndarray:
    a = rng.standard_normal((max(rows, cols), min(rows, cols)))
    q, r = np.linalg.qr(a)
    q = q * np.sign(np.diag(r))
    return q[:rows, :cols] if q.shape[0] >= rows else q.T[:rows, :cols]


class Dense(Layer):
    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator, name: str = "dense"):
        self.n_in = n_in
        self.n_out = n_out
        self.w = Parameter(f"{name}.w", _uniform_fan_in(rng, n_in, (n_in, n_out)), True)
        self.b = Parameter(f"{name}.b", _uniform_fan_in(rng, n_in, (n_out,)), False)
        self._x = None

    def params(self):
        return [self.w, self.b]

    def forward(self, x, train=True):
        if x.shape[-1] != self.n_in:
            raise DimensionError(f"{self.w.name}: expected {self.n_in} inputs, got {x.shape}")
        self._x = x
        return x @ self.w.value + self.b.value

    def backward(self, dout):
        x2 = self._x.reshape(-1, self.n_in)
        d2 = dout.reshape(-1, self.n_out)
        self.w.grad += x2.T @ d2
        self.b.grad += d2.sum(axis=0)
        return dout @ self.w.value.T


class ReLU(Layer):
    def forward(self, x, train=True):
        self._mask = x > 0
        return x * self._mask

    def backward(self, dout):
        return dout * self._mask


class Conv2d(Layer):
    """3x3 convolution, stride 1, no padding, via im2col."""

    def __init__(self, c_in: int, c_out: int, rng: np.random.Generator,
                 kernel: int = 3, name: str = "conv"):
        self.c_in, self.c_out, self.k = c_in, c_out, kernel
        fan_in = c_in * kernel * kernel
        self.w = Parameter(f"{name}.w", _uniform_fan_in(rng, fan_in, (fan_in, c_out)), True)
        self.b = Parameter(f"{name}.b", _uniform_fan_in(rng, fan_in, (c_out,)), False)

    def params(self):
        return [self.w, self.b]

    def out_hw(self, h: int, w: int) -> tuple[int, int]:
        return h - self.k + 1, w - self.k + 1

    def _im2col(self, x):
        b, c, h, w = x.shape
        oh, ow = self.out_hw(h, w)
        s = x.strides
        view = np.lib.stride_tricks.as_strided(
            x, shape=(b, c, self.k, self.k, oh, ow),
            strides=(s[0], s[1], s[2], s[3], s[2], s[3]))
        return view.transpose(0, 4, 5, 1, 2, 3).reshape(b * oh * ow, c * self.k * self.k)

    def forward(self, x, train=True):
        if x.ndim != 4 or x.shape[1] != self.c_in:
            raise DimensionError(
                f"{self.w.name}: expected (B, {self.c_in}, H, W), got {x.shape}")
        b, _, h, w = x.shape
        oh, ow = self.out_hw(h, w)
        if oh < 1 or ow < 1:
            raise DimensionError(f"{self.w.name}: input {h}x{w} too small for k={self.k}")
        self._shape = x.shape
        self._cols = self._im2col(np.ascontiguousarray(x))
        out = self._cols @ self.w.value + self.b.value
        return out.reshape(b, oh, ow, self.c_out).transpose(0, 3, 1, 2)

    def backward(self, dout):
        b, _, h, w = self._shape
        oh, ow = self.out_hw(h, w)
        dflat = dout.transpose(0, 2, 3, 1).reshape(-1, self.c_out)
        self.w.grad += self._cols.T @ dflat
        self.b.grad += dflat.sum(axis=0)
        dcols = (dflat @ self.w.value.T).reshape(b, oh, ow, self.c_in, self.k, self.k)
        dcols = dcols.transpose(0, 3, 1, 2, 4, 5)
        dx = np.zeros(self._shape)
        for i in range(self.k):
            for j in range(self.k):
                dx[:, :, i:i + oh, j:j + ow] += dcols[:, :, :, :, i, j]
        return dx


class BatchNorm2d(Layer):
    """Per-channel normalization over (B, H, W); running stats with momentum 0.1."""

    def __init__(self, channels: int, momentum: float = 0.1, eps: float = 1e-5,
                 name: str = "bn"):
        self.gamma = Parameter(f"{name}.gamma", np.ones(channels), False)
        self.beta = Parameter(f"{name}.beta", np.zeros(channels), False)
        self.running_mean = np.zeros(channels)
        self.running_var = np.ones(channels)
        self.momentum = momentum
        self.eps = eps

    def params(self):
        return [self.gamma, self.beta]

    def forward(self, x, train=True):
        self._train = train
        g = self.gamma.value[None, :, None, None]
        b = self.beta.value[None, :, None, None]
        if train:
            mean = x.mean(axis=(0, 2, 3))
            var = x.var(axis=(0, 2, 3))
            self.running_mean = (1 - self.momentum) * self.running_mean + self.momentum * mean
            self.running_var = (1 - self.momentum) * self.running_var + self.momentum * var
            self._x = x
            self._mean = mean
            self._inv = 1.0 / np.sqrt(var + self.eps)
            self._xhat = (x - mean[None, :, None, None]) * self._inv[None, :, None, None]
        else:
            inv = 1.0 / np.sqrt(self.running_var + self.eps)
            self._inv = inv
            self._xhat = (x - self.running_mean[None, :, None, None]) * inv[None, :, None, None]
        return g * self._xhat + b

    def backward(self, dout):
        g = self.gamma.value[None, :, None, None]
        self.gamma.grad += (dout * self._xhat).sum(axis=(0, 2, 3))
        self.beta.grad += dout.sum(axis=(0, 2, 3))
        dxhat = dout * g
        if not self._train:
            return dxhat * self._inv[None, :, None, None]
        x, mean, inv = self._x, self._mean, self._inv
        m = x.shape[0] * x.shape[2] * x.shape[3]
        xc = x - mean[None, :, None, None]
        dvar = (dxhat * xc).sum(axis=(0, 2, 3)) * (-0.5) * inv ** 3
        dmean = -(dxhat.sum(axis=(0, 2, 3))) * inv + dvar * (-2.0 / m) * xc.sum(axis=(0, 2, 3))
        return (dxhat * inv[None, :, None, None]
                + (2.0 / m) * dvar[None, :, None, None] * xc
                + dmean[None, :, None, None] / m)


class MaxPool2d(Layer):
    """2x2 max pooling, stride 2; trailing odd rows/columns are dropped."""

    def __init__(self, kernel: int = 2):
        self.k = kernel

    def forward(self, x, train=True):
        b, c, h, w = x.shape
        oh, ow = h // self.k, w // self.k
        self._shape = x.shape
        crop = x[:, :, :oh * self.k, :ow * self.k]
        windows = crop.reshape(b, c, oh, self.k, ow, self.k).transpose(0, 1, 2, 4, 3, 5)
        flat = windows.reshape(b, c, oh, ow, self.k * self.k)
        self._arg = np.argmax(flat, axis=-1)
        return np.take_along_axis(flat, self._arg[..., None], axis=-1)[..., 0]

    def backward(self, dout):
        b, c, h, w = self._shape
        oh, ow = h // self.k, w // self.k
        dflat = np.zeros((b, c, oh, ow, self.k * self.k))
        np.put_along_axis(dflat, self._arg[..., None], dout[..., None], axis=-1)
        dwin = dflat.reshape(b, c, oh, ow, self.k, self.k).transpose(0, 1, 2, 4, 3, 5)
        dx = np.zeros(self._shape)
        dx[:, :, :oh * self.k, :ow * self.k] = dwin.reshape(b, c, oh * self.k, ow * self.k)
        return dx


class Flatten(Layer):
    def forward(self, x, train=True):
        self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, dout):
        return dout.reshape(self._shape)


class GRULayer(Layer):
    """Unidirectional GRU over full sequences, gate order (r, z, n).

        r = sigmoid(x W_ir + h W_hr + b);  z likewise
        n = tanh(x W_in + b_in + r * (h W_hn + b_hn))
        h' = (1 - z) * n + z * h

    A saturated update gate (z ~ 1) carries the previous state unchanged.
    The initial hidden state is fixed to zero.
    """

    def __init__(self, n_in: int, n_hidden: int, rng: np.random.Generator, name: str = "gru"):
        self.n_in, self.n_hidden = n_in, n_hidden
        h = n_hidden
        w_hh = np.concatenate([_orthogonal(rng, h, h) for _ in range(3)], axis=1)
        self.w_ih = Parameter(f"{name}.w_ih", _uniform_fan_in(rng, n_in, (n_in, 3 * h)), True)
        self.w_hh = Parameter(f"{name}.w_hh", w_hh, True)
        self.b_ih = Parameter(f"{name}.b_ih", np.zeros(3 * h), False)
        self.b_hh = Parameter(f"{name}.b_hh", np.zeros(3 * h), False)

    def params(self):
        return [self.w_ih, self.w_hh, self.b_ih, self.b_hh]

    def forward(self, x, train=True):
        if x.ndim != 3 or x.shape[2] != self.n_in:
            raise DimensionError(f"{self.w_ih.name}: expected (B, T, {self.n_in}), got {x.shape}")
        b, t, _ = x.shape
        h = self.n_hidden
        hs = np.zeros((b, t, h))
        state = np.zeros((b, h))
        self._cache = []
        for step in range(t):
            xt = x[:, step, :]
            gi = xt @ self.w_ih.value + self.b_ih.value
            gh = state @ self.w_hh.value + self.b_hh.value
            r = _sigmoid(gi[:, :h] + gh[:, :h])
            z = _sigmoid(gi[:, h:2 * h] + gh[:, h:2 * h])
            hn = gh[:, 2 * h:]
            n = np.tanh(gi[:, 2 * h:] + r * hn)
            new = (1.0 - z) * n + z * state
            self._cache.append((xt, state, r, z, n, hn))
            hs[:, step, :] = new
            state = new
        return hs

    def backward(self, dout):
        b, t, h = dout.shape
        dx = np.zeros((b, t, self.n_in))
        dstate = np.zeros((b, h))
        for step in range(t - 1, -1, -1):
            xt, prev, r, z, n, hn = self._cache[step]
            dh = dout[:, step, :] + dstate
            dz = dh * (prev - n) * z * (1.0 - z)
            dn = dh * (1.0 - z) * (1.0 - n * n)
            dr = dn * hn * r * (1.0 - r)
            dgi = np.concatenate([dr, dz, dn], axis=1)
            dgh = np.concatenate([dr, dz, dn * r], axis=1)
            self.w_ih.grad += xt.T @ dgi
            self.b_ih.grad += dgi.sum(axis=0)
            self.w_hh.grad += prev.T @ dgh
            self.b_hh.grad += dgh.sum(axis=0)
            dx[:, step, :] = dgi @ self.w_ih.value.T
            dstate = dgh @ self.w_hh.value.T + dh * z
        return dx


def positional_encoding(i: int, d: int) -> np.ndarray:
    """Sinusoidal position token: even slots sin(i / 10000^(2j/d)), odd cos."""
    vec = np.empty(d)
    j = np.arange(0, d, 2)
    angle = i / np.power(10000.0, j / d)
    vec[0::2] = np.sin(angle)
    vec[1::2] = np.cos(angle[: d // 2])
    return vec


def sinusoidal_positions(t: int, d: int) -> np.ndarray:
    return np.stack([positional_encoding(i, d) for i in range(t)])


class MultiHeadSelfAttention(Layer):
    """Scaled dot-product self-attention (Q = K = V = input)."""

    def __init__(self, d: int, heads: int, rng: np.random.Generator, name: str = "attn"):
        if d % heads != 0:
            raise DimensionError(f"model dim {d} not divisible by {heads} heads")
        self.d, self.heads, self.dh = d, heads, d // heads
        def mat(suffix):
            return Parameter(f"{name}.{suffix}", _uniform_fan_in(rng, d, (d, d)), True)
        def vec(suffix):
            return Parameter(f"{name}.{suffix}", np.zeros(d), False)
        self.wq, self.wk, self.wv, self.wo = mat("wq"), mat("wk"), mat("wv"), mat("wo")
        # no key bias: a shared key offset cancels in the row softmax
        self.bq, self.bv, self.bo = vec("bq"), vec("bv"), vec("bo")
        self.last_attention: np.ndarray | None = None

    def params(self):
        return [self.wq, self.wk, self.wv, self.wo, self.bq, self.bv, self.bo]

    def _split(self, x):
        b, t, _ = x.shape
        return x.reshape(b, t, self.heads, self.dh).transpose(0, 2, 1, 3)

    def _merge(self, x):
        b, heads, t, dh = x.shape
        return x.transpose(0, 2, 1, 3).reshape(b, t, heads * dh)

    def forward(self, x, train=True):
        if x.ndim != 3 or x.shape[2] != self.d:
            raise DimensionError(f"{self.wq.name}: expected (B, T, {self.d}), got {x.shape}")
        self._x = x
        q = self._split(x @ self.wq.value + self.bq.value)
        k = self._split(x @ self.wk.value)
        v = self._split(x @ self.wv.value + self.bv.value)
        scores = q @ k.transpose(0, 1, 3, 2) / math.sqrt(self.dh)
        scores -= scores.max(axis=-1, keepdims=True)
        e = np.exp(scores)
        a = e / e.sum(axis=-1, keepdims=True)
        ctx = self._merge(a @ v)
        self._q, self._k, self._v, self._a, self._ctx = q, k, v, a, ctx
        self.last_attention = a
        return ctx @ self.wo.value + self.bo.value

    def backward(self, dout):
        x, q, k, v, a, ctx = self._x, self._q, self._k, self._v, self._a, self._ctx
        b, t, d = x.shape
        dflat = dout.reshape(-1, d)
        self.wo.grad += ctx.reshape(-1, d).T @ dflat
        self.bo.grad += dflat.sum(axis=0)
        dctx = self._split(dout @ self.wo.value.T)
        da = dctx @ v.transpose(0, 1, 3, 2)
        dv = a.transpose(0, 1, 3, 2) @ dctx
        dscores = a * (da - (da * a).sum(axis=-1, keepdims=True))
        dscores /= math.sqrt(self.dh)
        dq = dscores @ k
        dk = dscores.transpose(0, 1, 3, 2) @ q
        dx = np.zeros_like(x)
        xflat = x.reshape(-1, d)
        for dpart, w, bias in ((dq, self.wq, self.bq), (dk, self.wk, None),
                               (dv, self.wv, self.bv)):
            dmerged = self._merge(dpart)
            dm = dmerged.reshape(-1, d)
            w.grad += xflat.T @ dm
            if bias is not None:
                bias.grad += dm.sum(axis=0)
            dx += dmerged @ w.value.T
        return dx


class LayerNorm(Layer):
    def __init__(self, d: int, eps: float = 1e-5, name: str = "ln"):
        self.gamma = Parameter(f"{name}.gamma", np.ones(d), False)
        self.beta = Parameter(f"{name}.beta", np.zeros(d), False)
        self.eps = eps

    def params(self):
        return [self.gamma, self.beta]

    def forward(self, x, train=True):
        mean = x.mean(axis=-1, keepdims=True)
        var = x.var(axis=-1, keepdims=True)
        self._inv = 1.0 / np.sqrt(var + self.eps)
        self._xhat = (x - mean) * self._inv
        return self.gamma.value * self._xhat + self.beta.value

    def backward(self, dout):
        xhat, inv = self._xhat, self._inv
        axes = tuple(range(dout.ndim - 1))
        self.gamma.grad += (dout * xhat).sum(axis=axes)
        self.beta.grad += dout.sum(axis=axes)
        dxhat = dout * self.gamma.value
        return inv * (dxhat - dxhat.mean(axis=-1, keepdims=True)
                      - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))


class MeanPoolTime(Layer):
    """Feature-wise average over the time axis of a (B, T, d) sequence."""

    def forward(self, x, train=True):
        self._t = x.shape[1]
        return x.mean(axis=1)

    def backward(self, dout):
        return np.repeat(dout[:, None, :], self._t, axis=1) / self._t
