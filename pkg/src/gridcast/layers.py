"""Network layers with explicit forward and backward passes.

Each layer caches the activations its backward pass needs during
``forward`` and releases them when ``backward`` consumes them, so a
layer instance pairs exactly one backward with one forward. ``backward``
returns the gradient with respect to the layer input and stores
parameter gradients in ``self.grads`` (same keys and shapes as
``params()``). No autodiff anywhere: every gradient below is the
hand-derived derivative of the forward map, and the test suite checks
all of them against central finite differences.
"""

from __future__ import annotations

import numpy as np

from .errors import DimensionError, ParameterError, StateError
from .tensor import RngState, as_tensor, sigmoid, softmax_rows


def glorot_uniform(rng: RngState, fan_in: int, fan_out: int, shape) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, shape)


class _Layer:
    """Shared cache/grads bookkeeping."""

    def __init__(self):
        self._cache = None
        self.grads: dict[str, np.ndarray] = {}

    def params(self) -> dict[str, np.ndarray]:
        return {}

    def _take_cache(self):
        if self._cache is None:
            raise StateError(f"{type(self).__name__}.backward called without a prior forward")
        cache, self._cache = self._cache, None
        return cache


class Conv1d(_Layer):
    """1-D convolution over time with "same" zero padding, stride 1.

    Kernels have shape (out_ch, in_ch, k) with k odd; output length
    equals input length for every odd k. Internally an im2col matrix
    turns the convolution into one matrix product, which keeps the
    backward pass a pair of matmuls plus a fold of the column gradient
    back onto overlapping time positions.
    """

    def __init__(self, kernels, bias):
        super().__init__()
        self.kernels = as_tensor(kernels)
        self.bias = as_tensor(bias)
        if self.kernels.ndim != 3:
            raise ParameterError(f"kernels must be (out_ch, in_ch, k), got {self.kernels.shape}")
        out_ch, in_ch, k = self.kernels.shape
        if k % 2 == 0:
            raise ParameterError(f"kernel width must be odd for same padding, got {k}")
        if out_ch < 1 or in_ch < 1:
            raise ParameterError(f"channel counts must be >= 1, got {self.kernels.shape}")
        if self.bias.shape != (out_ch,):
            raise ParameterError(f"bias shape {self.bias.shape} does not match out_ch {out_ch}")

    @classmethod
    def init(cls, in_ch: int, out_ch: int, k: int, rng: RngState) -> "Conv1d":
        kernels = glorot_uniform(rng, in_ch * k, out_ch * k, (out_ch, in_ch, k))
        return cls(kernels, np.zeros(out_ch))

    def params(self):
        return {"kernels": self.kernels, "bias": self.bias}

    def forward(self, x) -> np.ndarray:
        x = as_tensor(x)
        out_ch, in_ch, k = self.kernels.shape
        if x.ndim != 2 or x.shape[1] != in_ch:
            raise DimensionError(
                f"conv1d expects (T, {in_ch}) input, got {x.shape}"
            )
        t_len = x.shape[0]
        pad = k // 2
        xp = np.zeros((t_len + 2 * pad, in_ch))
        xp[pad:pad + t_len] = x
        # cols[t, i, j] = padded input at time t+j, channel i
        cols = np.empty((t_len, in_ch, k))
        for j in range(k):
            cols[:, :, j] = xp[j:j + t_len]
        cols = cols.reshape(t_len, in_ch * k)
        w_mat = self.kernels.reshape(out_ch, in_ch * k)
        self._cache = (cols, t_len)
        return cols @ w_mat.T + self.bias

    def backward(self, upstream):
        cols, t_len = self._take_cache()
        upstream = as_tensor(upstream)
        out_ch, in_ch, k = self.kernels.shape
        pad = k // 2
        w_mat = self.kernels.reshape(out_ch, in_ch * k)
        self.grads = {
            "kernels": (upstream.T @ cols).reshape(out_ch, in_ch, k),
            "bias": upstream.sum(axis=0),
        }
        dcols = (upstream @ w_mat).reshape(t_len, in_ch, k)
        dxp = np.zeros((t_len + 2 * pad, in_ch))
        for j in range(k):
            dxp[j:j + t_len] += dcols[:, :, j]
        return dxp[pad:pad + t_len]


class Gru(_Layer):
    """Gated recurrent unit over a full sequence.

    Per step, with distinct input (W_*) and recurrent (U_*) matrices:

        r_t = sigmoid(x_t W_r + h_{t-1} U_r + b_r)
        z_t = sigmoid(x_t W_z + h_{t-1} U_z + b_z)
        c_t = tanh(x_t W + (r_t * h_{t-1}) U + b)
        h_t = (1 - z_t) * h_{t-1} + z_t * c_t

    so z_t gates the candidate in. The backward pass is full
    backpropagation through time across all steps, including the
    gradient on h0 (kept in ``h0_grad``).
    """

    def __init__(self, W_r, W_z, W, U_r, U_z, U, b_r, b_z, b):
        super().__init__()
        self.W_r, self.W_z, self.W = (as_tensor(m) for m in (W_r, W_z, W))
        self.U_r, self.U_z, self.U = (as_tensor(m) for m in (U_r, U_z, U))
        self.b_r, self.b_z, self.b = (as_tensor(v) for v in (b_r, b_z, b))
        hidden = self.W_r.shape[1]
        for name, m in (("W_z", self.W_z), ("W", self.W)):
            if m.shape != self.W_r.shape:
                raise ParameterError(f"{name} shape {m.shape} != W_r shape {self.W_r.shape}")
        for name, m in (("U_r", self.U_r), ("U_z", self.U_z), ("U", self.U)):
            if m.shape != (hidden, hidden):
                raise ParameterError(f"{name} shape {m.shape} != ({hidden}, {hidden})")
        for name, v in (("b_r", self.b_r), ("b_z", self.b_z), ("b", self.b)):
            if v.shape != (hidden,):
                raise ParameterError(f"{name} shape {v.shape} != ({hidden},)")
        self.h0_grad = None

    @classmethod
    def init(cls, in_dim: int, hidden: int, rng: RngState) -> "Gru":
        w = [glorot_uniform(rng, in_dim, hidden, (in_dim, hidden)) for _ in range(3)]
        u = [glorot_uniform(rng, hidden, hidden, (hidden, hidden)) for _ in range(3)]
        b = [np.zeros(hidden) for _ in range(3)]
        return cls(w[0], w[1], w[2], u[0], u[1], u[2], b[0], b[1], b[2])

    def params(self):
        return {
            "W_r": self.W_r, "W_z": self.W_z, "W": self.W,
            "U_r": self.U_r, "U_z": self.U_z, "U": self.U,
            "b_r": self.b_r, "b_z": self.b_z, "b": self.b,
        }

    def forward(self, x, h0=None) -> np.ndarray:
        x = as_tensor(x)
        in_dim, hidden = self.W_r.shape
        if x.ndim != 2 or x.shape[1] != in_dim:
            raise DimensionError(f"gru expects (T, {in_dim}) input, got {x.shape}")
        t_len = x.shape[0]
        h0 = np.zeros(hidden) if h0 is None else as_tensor(h0)
        if h0.shape != (hidden,):
            raise DimensionError(f"h0 shape {h0.shape} != ({hidden},)")
        # input projections for every step in one shot
        xr = x @ self.W_r + self.b_r
        xz = x @ self.W_z + self.b_z
        xh = x @ self.W + self.b
        hs = np.empty((t_len + 1, hidden))
        hs[0] = h0
        rs = np.empty((t_len, hidden))
        zs = np.empty((t_len, hidden))
        cs = np.empty((t_len, hidden))
        # gates inlined (same math as tensor.sigmoid) to keep the step
        # loop free of per-call overhead
        with np.errstate(over="ignore"):
            for t in range(t_len):
                h_prev = hs[t]
                rs[t] = 1.0 / (1.0 + np.exp(-(xr[t] + h_prev @ self.U_r)))
                zs[t] = 1.0 / (1.0 + np.exp(-(xz[t] + h_prev @ self.U_z)))
                cs[t] = np.tanh(xh[t] + (rs[t] * h_prev) @ self.U)
                hs[t + 1] = (1.0 - zs[t]) * h_prev + zs[t] * cs[t]
        self._cache = (x, hs, rs, zs, cs)
        return hs[1:].copy()

    def backward(self, upstream):
        x, hs, rs, zs, cs = self._take_cache()
        upstream = as_tensor(upstream)
        t_len, hidden = rs.shape
        if upstream.shape != (t_len, hidden):
            raise DimensionError(f"upstream shape {upstream.shape} != ({t_len}, {hidden})")
        # pre-activation gradients per step; weight gradients batch into
        # single matmuls afterwards
        dar_seq = np.empty((t_len, hidden))
        daz_seq = np.empty((t_len, hidden))
        dah_seq = np.empty((t_len, hidden))
        u_t, ur_t, uz_t = self.U.T, self.U_r.T, self.U_z.T
        carry = np.zeros(hidden)
        for t in range(t_len - 1, -1, -1):
            delta = upstream[t] + carry
            h_prev, r, z, c = hs[t], rs[t], zs[t], cs[t]
            daz = delta * (c - h_prev) * z * (1.0 - z)
            dah = delta * z * (1.0 - c * c)
            drh = dah @ u_t               # grad w.r.t. (r * h_prev)
            dar = drh * h_prev * r * (1.0 - r)
            dar_seq[t] = dar
            daz_seq[t] = daz
            dah_seq[t] = dah
            carry = delta * (1.0 - z) + dar @ ur_t + daz @ uz_t + drh * r
        h_prev_seq = hs[:-1]
        self.grads = {
            "W_r": x.T @ dar_seq, "U_r": h_prev_seq.T @ dar_seq, "b_r": dar_seq.sum(axis=0),
            "W_z": x.T @ daz_seq, "U_z": h_prev_seq.T @ daz_seq, "b_z": daz_seq.sum(axis=0),
            "W": x.T @ dah_seq, "U": (rs * h_prev_seq).T @ dah_seq, "b": dah_seq.sum(axis=0),
        }
        self.h0_grad = carry
        return dar_seq @ self.W_r.T + daz_seq @ self.W_z.T + dah_seq @ self.W.T


class Attention(_Layer):
    """Dot-product attention over a sequence.

    Keys and queries are learned projections of the input; values are
    the unprojected input rows. Scores are scaled by 1/sqrt(d_attn)
    before the row softmax, so each output row is a convex combination
    of the input rows.
    """

    def __init__(self, K_w, Q_w):
        super().__init__()
        self.K_w = as_tensor(K_w)
        self.Q_w = as_tensor(Q_w)
        if self.K_w.shape != self.Q_w.shape or self.K_w.ndim != 2:
            raise ParameterError(
                f"K_w and Q_w must share a 2-D shape, got {self.K_w.shape} and {self.Q_w.shape}"
            )
        if self.K_w.shape[1] < 1:
            raise ParameterError("projection width d_attn must be >= 1")

    @classmethod
    def init(cls, d: int, d_attn: int, rng: RngState) -> "Attention":
        return cls(
            glorot_uniform(rng, d, d_attn, (d, d_attn)),
            glorot_uniform(rng, d, d_attn, (d, d_attn)),
        )

    def params(self):
        return {"K_w": self.K_w, "Q_w": self.Q_w}

    def forward(self, x) -> np.ndarray:
        x = as_tensor(x)
        d, d_attn = self.K_w.shape
        if x.ndim != 2 or x.shape[1] != d:
            raise DimensionError(f"attention expects (T, {d}) input, got {x.shape}")
        keys = x @ self.K_w
        queries = x @ self.Q_w
        scores = queries @ keys.T / np.sqrt(d_attn)
        weights = softmax_rows(scores)
        self._cache = (x, keys, queries, weights)
        return weights @ x

    def backward(self, upstream):
        x, keys, queries, weights = self._take_cache()
        upstream = as_tensor(upstream)
        scale = 1.0 / np.sqrt(self.K_w.shape[1])
        dweights = upstream @ x.T
        # softmax backward per row: dS = A * (dA - sum(dA * A))
        dscores = weights * (dweights - (dweights * weights).sum(axis=1, keepdims=True))
        dqueries = dscores @ keys * scale
        dkeys = dscores.T @ queries * scale
        self.grads = {"K_w": x.T @ dkeys, "Q_w": x.T @ dqueries}
        return weights.T @ upstream + dqueries @ self.Q_w.T + dkeys @ self.K_w.T


class Dense(_Layer):
    """Affine map with an optional elementwise activation."""

    def __init__(self, weight, bias, activation="identity"):
        super().__init__()
        self.weight = as_tensor(weight)
        self.bias = as_tensor(bias)
        if self.weight.ndim != 2:
            raise ParameterError(f"weight must be 2-D, got {self.weight.shape}")
        if self.bias.shape != (self.weight.shape[1],):
            raise ParameterError(
                f"bias shape {self.bias.shape} != ({self.weight.shape[1]},)"
            )
        if activation not in ("relu", "sigmoid", "identity"):
            raise ParameterError(f"unsupported dense activation {activation!r}")
        self.activation = activation

    @classmethod
    def init(cls, in_dim: int, out_dim: int, rng: RngState, activation="identity") -> "Dense":
        w = glorot_uniform(rng, in_dim, out_dim, (in_dim, out_dim))
        return cls(w, np.zeros(out_dim), activation)

    def params(self):
        return {"weight": self.weight, "bias": self.bias}

    def forward(self, x) -> np.ndarray:
        x = as_tensor(x)
        if x.ndim != 2 or x.shape[1] != self.weight.shape[0]:
            raise DimensionError(
                f"dense expects (n, {self.weight.shape[0]}) input, got {x.shape}"
            )
        z = x @ self.weight + self.bias
        if self.activation == "relu":
            y = np.maximum(z, 0.0)
        elif self.activation == "sigmoid":
            y = sigmoid(z)
        else:
            y = z
        self._cache = (x, z, y)
        return y

    def backward(self, upstream):
        x, z, y = self._take_cache()
        upstream = as_tensor(upstream)
        if self.activation == "relu":
            dz = upstream * (z > 0.0)
        elif self.activation == "sigmoid":
            dz = upstream * y * (1.0 - y)
        else:
            dz = upstream
        self.grads = {"weight": x.T @ dz, "bias": dz.sum(axis=0)}
        return dz @ self.weight.T


class Dropout(_Layer):
    """Inverted dropout: identity at inference, mask + rescale in training."""

    def __init__(self, rate: float):
        super().__init__()
        if not 0.0 <= rate < 1.0:
            raise ParameterError(f"dropout rate must be in [0, 1), got {rate}")
        self.rate = rate

    def forward(self, x, training: bool, rng: RngState | None = None) -> np.ndarray:
        x = as_tensor(x)
        if not training or self.rate == 0.0:
            self._cache = np.ones_like(x)
            return x.copy()
        if rng is None:
            raise ParameterError("dropout in training mode needs an rng")
        keep = rng.uniforms(x.size).reshape(x.shape) >= self.rate
        mask = keep / (1.0 - self.rate)
        self._cache = mask
        return x * mask

    def backward(self, upstream):
        mask = self._take_cache()
        return as_tensor(upstream) * mask


class LayerNorm(_Layer):
    """Per-row normalization with learned gain and shift.

    Each row is centered by its mean and divided by the square root of
    its population variance plus epsilon, making inference independent
    of batch composition.
    """

    def __init__(self, gain, shift, epsilon: float = 1e-5):
        super().__init__()
        self.gain = as_tensor(gain)
        self.shift = as_tensor(shift)
        if epsilon <= 0:
            raise ParameterError(f"epsilon must be positive, got {epsilon}")
        if self.gain.shape != self.shift.shape or self.gain.ndim != 1:
            raise ParameterError(
                f"gain/shift must share a 1-D shape, got {self.gain.shape} and {self.shift.shape}"
            )
        self.epsilon = float(epsilon)

    @classmethod
    def init(cls, d: int) -> "LayerNorm":
        return cls(np.ones(d), np.zeros(d))

    def params(self):
        return {"gain": self.gain, "shift": self.shift}

    def forward(self, x) -> np.ndarray:
        x = as_tensor(x)
        d = self.gain.shape[0]
        if x.ndim != 2 or x.shape[1] != d:
            raise DimensionError(f"layernorm expects (n, {d}) input, got {x.shape}")
        mu = x.mean(axis=1, keepdims=True)
        var = x.var(axis=1, keepdims=True)
        inv = 1.0 / np.sqrt(var + self.epsilon)
        xhat = (x - mu) * inv
        self._cache = (xhat, inv)
        return self.gain * xhat + self.shift

    def backward(self, upstream):
        xhat, inv = self._take_cache()
        upstream = as_tensor(upstream)
        dxhat = upstream * self.gain
        self.grads = {
            "gain": (upstream * xhat).sum(axis=0),
            "shift": upstream.sum(axis=0),
        }
        return inv * (
            dxhat
            - dxhat.mean(axis=1, keepdims=True)
            - xhat * (dxhat * xhat).mean(axis=1, keepdims=True)
        )


class Relu(_Layer):
    """Elementwise relu used after the convolution branch."""

    def forward(self, x) -> np.ndarray:
        x = as_tensor(x)
        self._cache = x > 0.0
        return np.maximum(x, 0.0)

    def backward(self, upstream):
        positive = self._take_cache()
        return as_tensor(upstream) * positive
