"""Layers of the surrogate network with hand-written reverse-mode passes.

Tensors are laid out ``(batch, time, channels)``. Each layer is stateless:
parameters live in a dict owned by the network, ``forward`` returns the output
and a cache, ``backward`` maps the output gradient to the input gradient and
a dict of parameter gradients.
"""
from __future__ import annotations

import numpy as np

SELU_ALPHA = 1.6732632423543772
SELU_SCALE = 1.0507009873554805


def sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


class Layer:
    name: str = ""

    def param_shapes(self) -> dict:
        return {}

    def init_params(self, rng, dtype) -> dict:
        return {}

    def init_state(self, dtype) -> dict:
        return {}

    def forward(self, params, state, x, train: bool):
        raise NotImplementedError

    def backward(self, params, cache, dy, param_grads: bool = True):
        raise NotImplementedError

    def _p(self, key):
        return f"{self.name}/{key}"


class Conv1D(Layer):
    """Width-``w`` convolution along time with zero 'same' padding."""

    def __init__(self, name, in_ch, out_ch, width):
        if width % 2 != 1:
            raise ValueError("convolution width must be odd")
        self.name, self.in_ch, self.out_ch, self.width = name, in_ch, out_ch, width

    def param_shapes(self):
        return {self._p("W"): (self.width, self.in_ch, self.out_ch), self._p("b"): (self.out_ch,)}

    def init_params(self, rng, dtype):
        fan_in = self.width * self.in_ch
        lim = np.sqrt(3.0 / fan_in)
        return {
            self._p("W"): rng.uniform(-lim, lim, (self.width, self.in_ch, self.out_ch)).astype(dtype),
            self._p("b"): np.zeros(self.out_ch, dtype=dtype),
        }

    def _cols(self, x):
        if self.width == 1:
            return x
        B, T, C = x.shape
        h = self.width // 2
        xp = np.zeros((B, T + 2 * h, C), dtype=x.dtype)
        xp[:, h: h + T] = x
        return np.concatenate([xp[:, k: k + T] for k in range(self.width)], axis=2)

    def forward(self, params, state, x, train):
        cols = self._cols(x)
        W = params[self._p("W")].reshape(-1, self.out_ch)
        return cols @ W + params[self._p("b")], cols

    def backward(self, params, cache, dy, param_grads=True):
        cols = cache
        W = params[self._p("W")].reshape(-1, self.out_ch)
        grads = {}
        if param_grads:
            grads[self._p("W")] = (cols.reshape(-1, cols.shape[-1]).T @ dy.reshape(-1, self.out_ch)).reshape(
                self.width, self.in_ch, self.out_ch
            )
            grads[self._p("b")] = dy.sum(axis=(0, 1))
        dcols = dy @ W.T
        if self.width == 1:
            return dcols, grads
        B, T, _ = dy.shape
        h = self.width // 2
        dxp = np.zeros((B, T + 2 * h, self.in_ch), dtype=dy.dtype)
        for k in range(self.width):
            dxp[:, k: k + T] += dcols[:, :, k * self.in_ch: (k + 1) * self.in_ch]
        return dxp[:, h: h + T], grads


class Activation(Layer):
    def __init__(self, name, kind):
        if kind not in ("selu", "sin", "relu", "linear"):
            raise ValueError(f"unknown activation {kind!r}")
        self.name, self.kind = name, kind

    def forward(self, params, state, x, train):
        if self.kind == "selu":
            # branch-free form; np.where on mixed signs is an order of magnitude slower
            e = np.exp(np.minimum(x, 0.0))
            y = np.maximum(x, 0.0)
            y *= SELU_SCALE
            y += (SELU_SCALE * SELU_ALPHA) * (e - 1.0)
            return y, (x > 0, e)
        if self.kind == "sin":
            return np.sin(x), x
        if self.kind == "relu":
            return np.maximum(x, 0.0), x
        return x, None

    def backward(self, params, cache, dy, param_grads=True):
        x = cache
        if self.kind == "selu":
            pos, e = cache
            # exp(min(x, 0)) is 1 where x > 0
            d = (SELU_SCALE * SELU_ALPHA) * e
            d += pos * np.asarray(SELU_SCALE * (1.0 - SELU_ALPHA), dtype=d.dtype)
            return dy * d, {}
        if self.kind == "sin":
            return dy * np.cos(x), {}
        if self.kind == "relu":
            return dy * (x > 0), {}
        return dy, {}


class BatchNorm(Layer):
    """Per-channel normalization over batch and time."""

    def __init__(self, name, ch, momentum=0.99, eps=1e-3):
        self.name, self.ch, self.momentum, self.eps = name, ch, momentum, eps

    def param_shapes(self):
        return {self._p("gamma"): (self.ch,), self._p("beta"): (self.ch,)}

    def init_params(self, rng, dtype):
        return {self._p("gamma"): np.ones(self.ch, dtype=dtype), self._p("beta"): np.zeros(self.ch, dtype=dtype)}

    def init_state(self, dtype):
        return {self._p("mean"): np.zeros(self.ch, dtype=dtype), self._p("var"): np.ones(self.ch, dtype=dtype)}

    def forward(self, params, state, x, train):
        gamma, beta = params[self._p("gamma")], params[self._p("beta")]
        if train:
            mu = x.mean(axis=(0, 1))
            var = x.var(axis=(0, 1))
            m = self.momentum
            state[self._p("mean")] = m * state[self._p("mean")] + (1 - m) * mu
            state[self._p("var")] = m * state[self._p("var")] + (1 - m) * var
        else:
            mu, var = state[self._p("mean")], state[self._p("var")]
        inv = 1.0 / np.sqrt(var + self.eps)
        xhat = (x - mu) * inv
        return gamma * xhat + beta, (xhat, inv, train)

    def backward(self, params, cache, dy, param_grads=True):
        xhat, inv, train = cache
        gamma = params[self._p("gamma")]
        grads = {}
        if param_grads:
            grads[self._p("gamma")] = (dy * xhat).sum(axis=(0, 1))
            grads[self._p("beta")] = dy.sum(axis=(0, 1))
        dxhat = dy * gamma
        if not train:
            return dxhat * inv, grads
        n = dy.shape[0] * dy.shape[1]
        mean_d = dxhat.sum(axis=(0, 1)) / n
        mean_dx = (dxhat * xhat).sum(axis=(0, 1)) / n
        return (dxhat - mean_d - xhat * mean_dx) * inv, grads


class LSTM(Layer):
    """Single-direction LSTM returning the last hidden state.

    Gate blocks in the stacked kernels are ordered input, forget, output,
    cell candidate; the forget-gate bias starts at 1. Internally the sequence
    is processed time-major so every step touches contiguous memory.
    """

    def __init__(self, name, in_ch, units):
        self.name, self.in_ch, self.units = name, in_ch, units

    def param_shapes(self):
        H = self.units
        return {self._p("Wx"): (self.in_ch, 4 * H), self._p("Wh"): (H, 4 * H), self._p("b"): (4 * H,)}

    def init_params(self, rng, dtype):
        H, D = self.units, self.in_ch
        lim = np.sqrt(6.0 / (D + 4 * H))
        Wx = rng.uniform(-lim, lim, (D, 4 * H))
        q, r = np.linalg.qr(rng.normal(size=(4 * H, H)))
        Wh = (q * np.sign(np.diag(r))).T
        b = np.zeros(4 * H)
        b[H: 2 * H] = 1.0
        return {self._p("Wx"): Wx.astype(dtype), self._p("Wh"): Wh.astype(dtype), self._p("b"): b.astype(dtype)}

    def _half_scale(self, dtype):
        # sigmoid(z) = (1 + tanh(z/2)) / 2, so the three sigmoid blocks are
        # pre-scaled by 1/2 and a single tanh covers all four gates
        H = self.units
        sc = np.ones(4 * H, dtype=dtype)
        sc[: 3 * H] = 0.5
        return sc

    def forward(self, params, state, x, train):
        # internal layout is time-major and transposed, (T, 4H, B), so that
        # every gate block is a contiguous slab
        B, T, D = x.shape
        H = self.units
        dt = x.dtype
        sc = self._half_scale(dt)
        WhT = np.ascontiguousarray((params[self._p("Wh")] * sc).T)
        WxT = np.ascontiguousarray((params[self._p("Wx")] * sc).T)
        bcol = (params[self._p("b")] * sc)[:, None]
        xT = np.ascontiguousarray(x.transpose(1, 2, 0))
        gates = np.empty((T, 4 * H, B), dtype=dt)
        cs = np.zeros((T + 1, H, B), dtype=dt)
        hs = np.zeros((T + 1, H, B), dtype=dt)
        tcs = np.empty((T, H, B), dtype=dt)
        tmp = np.empty((H, B), dtype=dt)
        hz = np.empty((4 * H, B), dtype=dt)
        for t in range(T):
            z = gates[t]
            np.matmul(WxT, xT[t], out=z)
            np.matmul(WhT, hs[t], out=hz)
            z += hz
            z += bcol
            np.tanh(z, out=z)
            sg = z[: 3 * H]
            sg += 1.0
            sg *= 0.5
            c = cs[t + 1]
            np.multiply(z[H: 2 * H], cs[t], out=c)
            np.multiply(z[:H], z[3 * H:], out=tmp)
            c += tmp
            np.tanh(c, out=tcs[t])
            np.multiply(z[2 * H: 3 * H], tcs[t], out=hs[t + 1])
        return np.ascontiguousarray(hs[T].T), (xT, gates, cs, hs, tcs)

    def backward(self, params, cache, dy, param_grads=True):
        xT, gates, cs, hs, tcs = cache
        T, D, B = xT.shape
        H = self.units
        Wh = params[self._p("Wh")]
        Wx = params[self._p("Wx")]
        dZ = np.empty_like(gates)
        dxT = np.empty_like(xT)
        dh = np.array(dy.T, dtype=gates.dtype, order="C")
        dc = np.zeros_like(dh)
        tmp = np.empty_like(dh)
        for t in range(T - 1, -1, -1):
            a = gates[t]
            i, f, o, g = a[:H], a[H: 2 * H], a[2 * H: 3 * H], a[3 * H:]
            tc = tcs[t]
            dz = dZ[t]
            np.multiply(tc, tc, out=tmp)
            np.subtract(1.0, tmp, out=tmp)
            tmp *= o
            tmp *= dh
            dc += tmp
            do = dz[2 * H: 3 * H]
            np.multiply(dh, tc, out=do)
            do *= o
            np.subtract(1.0, o, out=tmp)
            do *= tmp
            di = dz[:H]
            np.multiply(dc, g, out=di)
            di *= i
            np.subtract(1.0, i, out=tmp)
            di *= tmp
            df = dz[H: 2 * H]
            np.multiply(dc, cs[t], out=df)
            df *= f
            np.subtract(1.0, f, out=tmp)
            df *= tmp
            dg = dz[3 * H:]
            np.multiply(g, g, out=tmp)
            np.subtract(1.0, tmp, out=tmp)
            np.multiply(dc, i, out=dg)
            dg *= tmp
            dc *= f
            np.matmul(Wh, dz, out=dh)
            np.matmul(Wx, dz, out=dxT[t])
        grads = {}
        if param_grads:
            grads[self._p("Wx")] = np.matmul(xT, dZ.transpose(0, 2, 1)).sum(axis=0)
            grads[self._p("Wh")] = np.matmul(hs[:T], dZ.transpose(0, 2, 1)).sum(axis=0)
            grads[self._p("b")] = dZ.sum(axis=(0, 2))
        return dxT.transpose(2, 0, 1), grads


class Dense(Layer):
    def __init__(self, name, in_ch, out_ch, gain=6.0, bias_init=0.0):
        self.name, self.in_ch, self.out_ch, self.gain = name, in_ch, out_ch, gain
        self.bias_init = bias_init

    def param_shapes(self):
        return {self._p("W"): (self.in_ch, self.out_ch), self._p("b"): (self.out_ch,)}

    def init_params(self, rng, dtype):
        lim = np.sqrt(self.gain / self.in_ch)
        return {
            self._p("W"): rng.uniform(-lim, lim, (self.in_ch, self.out_ch)).astype(dtype),
            self._p("b"): np.full(self.out_ch, self.bias_init, dtype=dtype),
        }

    def forward(self, params, state, x, train):
        return x @ params[self._p("W")] + params[self._p("b")], x

    def backward(self, params, cache, dy, param_grads=True):
        x = cache
        grads = {}
        if param_grads:
            grads[self._p("W")] = x.T @ dy
            grads[self._p("b")] = dy.sum(axis=0)
        return dy @ params[self._p("W")].T, grads


class Clip(Layer):
    """Clip to ``[0, 1]``; zero gradient outside the open interval."""

    def __init__(self, name="clip"):
        self.name = name

    def forward(self, params, state, x, train):
        return np.clip(x, 0.0, 1.0), x

    def backward(self, params, cache, dy, param_grads=True):
        x = cache
        return dy * ((x > 0.0) & (x < 1.0)), {}
