"""Differentiable layer primitives with hand-written backward passes.

Every forward returns (output, cache); the matching backward consumes
(upstream gradient, cache), accumulates parameter gradients in place
(Param.grad += ...), and returns the gradient with respect to the layer
input.  Caches hold exactly the activations the analytic backward needs.
Dropout records its masks so backward is exact for the sampled network.
"""

import numpy as np
from scipy.special import erf

from ..errors import ConfigError
from .params import init_linear_weight

LN_EPS = 1e-5


class Linear:
    """y = x @ W.T + b with W of shape (out_dim, in_dim).

    A pre-existing Param can be passed as weight to tie storages (the
    shared input/output embedding); gradients then accumulate into the
    single shared array.
    """

    def __init__(self, params, name, in_dim, out_dim, scheme, rng, dtype,
                 weight=None, bias=True):
        if weight is None:
            self.w = params.new(name + "_w", init_linear_weight(
                (out_dim, in_dim), in_dim, out_dim, scheme, rng, dtype))
        else:
            if weight.data.shape != (out_dim, in_dim):
                raise ConfigError("tied weight shape mismatch for %s" % name)
            self.w = weight
        self.b = params.new(name + "_b", np.zeros(out_dim, dtype=dtype)) \
            if bias else None

    def forward(self, x):
        y = x @ self.w.data.T
        if self.b is not None:
            y = y + self.b.data
        return y, x

    def backward(self, dy, cache):
        x = cache
        x2 = x.reshape(-1, x.shape[-1])
        dy2 = dy.reshape(-1, dy.shape[-1])
        self.w.grad += dy2.T @ x2
        if self.b is not None:
            self.b.grad += dy2.sum(axis=0)
        return dy @ self.w.data


class LayerNorm:
    """Standard layer normalization over the last axis."""

    def __init__(self, params, name, dim, dtype):
        self.g = params.new(name + "_g", np.ones(dim, dtype=dtype))
        self.b = params.new(name + "_b", np.zeros(dim, dtype=dtype))

    def forward(self, x):
        mu = x.mean(axis=-1, keepdims=True)
        xc = x - mu
        var = (xc * xc).mean(axis=-1, keepdims=True)
        inv = 1.0 / np.sqrt(var + LN_EPS)
        xhat = xc * inv
        y = self.g.data * xhat + self.b.data
        return y, (xhat, inv)

    def backward(self, dy, cache):
        xhat, inv = cache
        axes = tuple(range(dy.ndim - 1))
        self.g.grad += (dy * xhat).sum(axis=axes)
        self.b.grad += dy.sum(axis=axes)
        dxhat = dy * self.g.data
        m1 = dxhat.mean(axis=-1, keepdims=True)
        m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
        return inv * (dxhat - m1 - xhat * m2)


def activation_forward(x, kind):
    if kind == "relu":
        y = np.maximum(x, 0.0)
        return y, (x, kind)
    # exact gelu: 0.5 x (1 + erf(x / sqrt(2)))
    y = 0.5 * x * (1.0 + erf(x / np.sqrt(2.0)))
    return y, (x, kind)


def activation_backward(dy, cache):
    x, kind = cache
    if kind == "relu":
        return dy * (x > 0.0)
    phi_cdf = 0.5 * (1.0 + erf(x / np.sqrt(2.0)))
    phi_pdf = np.exp(-0.5 * x * x) / np.sqrt(2.0 * np.pi)
    return dy * (phi_cdf + x * phi_pdf)


def dropout_forward(x, p, train, rng):
    """Inverted dropout with a recorded mask; identity when p = 0."""
    if not train or p <= 0.0:
        return x, None
    if rng is None:
        raise ConfigError("dropout > 0 requires an rng stream in training")
    mask = (rng.random(x.shape) >= p).astype(x.dtype) / (1.0 - p)
    return x * mask, mask


def dropout_backward(dy, mask):
    if mask is None:
        return dy
    return dy * mask


def softmax_forward(scores):
    m = scores.max(axis=-1, keepdims=True)
    e = np.exp(scores - m)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_backward(dprobs, probs):
    inner = (dprobs * probs).sum(axis=-1, keepdims=True)
    return probs * (dprobs - inner)


class Embedding:
    """Token (or learned positional) embedding lookup."""

    def __init__(self, params, name, n_rows, dim, rng, dtype, weight=None):
        from .params import init_embedding_weight
        if weight is None:
            self.w = params.new(name,
                                init_embedding_weight((n_rows, dim), rng, dtype))
        else:
            self.w = weight

    def forward(self, ids):
        return self.w.data[ids], ids

    def backward(self, dy, cache):
        ids = cache
        np.add.at(self.w.grad, ids, dy)


def sinusoidal_table(n_positions, dim, dtype):
    """Fixed positional embeddings: interleaved sin/cos per position.

    Column pair 2i uses frequency 10000^(-2i/dim); position 0 encodes
    as [0, 1, 0, 1, ...].
    """
    if dim % 2 != 0:
        raise ConfigError("sinusoidal embeddings require an even dimension")
    positions = np.arange(n_positions, dtype=np.float64)[:, None]
    i2 = np.arange(0, dim, 2, dtype=np.float64)[None, :]
    angles = positions * np.power(10000.0, -i2 / dim)
    table = np.zeros((n_positions, dim), dtype=np.float64)
    table[:, 0::2] = np.sin(angles)
    table[:, 1::2] = np.cos(angles)
    return table.astype(dtype)


class MultiHeadAttention:
    """Multi-head scaled dot-product attention with additive masking.

    Masks are additive arrays broadcastable to (batch, 1, Tq, Tk) with
    0 at allowed keys and -inf at forbidden ones; forbidden positions
    get exactly zero attention weight, which is what makes padding
    bitwise-neutral for every non-pad output.
    """

    def __init__(self, params, name, q_dim, kv_dim, n_heads, scheme, rng,
                 dtype, attention_dropout=0.0):
        if q_dim % n_heads != 0:
            raise ConfigError("attention dim must be divisible by head count")
        self.n_heads = n_heads
        self.head_dim = q_dim // n_heads
        self.scale = 1.0 / np.sqrt(self.head_dim)
        self.attention_dropout = attention_dropout
        self.q_proj = Linear(params, name + "_q", q_dim, q_dim, scheme, rng, dtype)
        self.k_proj = Linear(params, name + "_k", kv_dim, q_dim, scheme, rng, dtype)
        self.v_proj = Linear(params, name + "_v", kv_dim, q_dim, scheme, rng, dtype)
        self.o_proj = Linear(params, name + "_o", q_dim, q_dim, scheme, rng, dtype)

    def _split_heads(self, x):
        b, t, d = x.shape
        return x.reshape(b, t, self.n_heads, self.head_dim).transpose(0, 2, 1, 3)

    def _merge_heads(self, x):
        b, h, t, hd = x.shape
        return x.transpose(0, 2, 1, 3).reshape(b, t, h * hd)

    def forward(self, x, memory, mask, train=False, rng=None):
        q_flat, q_cache = self.q_proj.forward(x)
        k_flat, k_cache = self.k_proj.forward(memory)
        v_flat, v_cache = self.v_proj.forward(memory)
        q = self._split_heads(q_flat)
        k = self._split_heads(k_flat)
        v = self._split_heads(v_flat)
        scores = (q @ k.transpose(0, 1, 3, 2)) * self.scale
        if mask is not None:
            scores = scores + mask
        probs = softmax_forward(scores)
        probs_kept, drop_mask = dropout_forward(
            probs, self.attention_dropout, train, rng)
        ctx = self._merge_heads(probs_kept @ v)
        y, o_cache = self.o_proj.forward(ctx)
        cache = (q_cache, k_cache, v_cache, o_cache,
                 q, k, v, probs, probs_kept, drop_mask)
        return y, cache

    def backward(self, dy, cache):
        (q_cache, k_cache, v_cache, o_cache,
         q, k, v, probs, probs_kept, drop_mask) = cache
        dctx = self.o_proj.backward(dy, o_cache)
        dctx = self._split_heads(dctx)
        dprobs_kept = dctx @ v.transpose(0, 1, 3, 2)
        dv = probs_kept.transpose(0, 1, 3, 2) @ dctx
        dprobs = dropout_backward(dprobs_kept, drop_mask)
        dscores = softmax_backward(dprobs, probs) * self.scale
        dq = dscores @ k
        dk = dscores.transpose(0, 1, 3, 2) @ q
        dx = self.q_proj.backward(self._merge_heads(dq), q_cache)
        dmem = self.k_proj.backward(self._merge_heads(dk), k_cache)
        dmem += self.v_proj.backward(self._merge_heads(dv), v_cache)
        return dx, dmem


class FeedForward:
    """Position-wise feed-forward block: dim -> 4*dim [-> 4*dim ...] -> dim."""

    def __init__(self, params, name, dim, n_hidden_layers, activation,
                 scheme, rng, dtype):
        hidden = 4 * dim
        dims = [dim] + [hidden] * n_hidden_layers + [dim]
        self.linears = [
            Linear(params, "%s_l%d" % (name, i), dims[i], dims[i + 1],
                   scheme, rng, dtype)
            for i in range(len(dims) - 1)
        ]
        self.activation = activation

    def forward(self, x):
        caches = []
        h = x
        for lin in self.linears[:-1]:
            h, c = lin.forward(h)
            caches.append(c)
            h, a = activation_forward(h, self.activation)
            caches.append(a)
        h, c = self.linears[-1].forward(h)
        caches.append(c)
        return h, caches

    def backward(self, dy, caches):
        dh = self.linears[-1].backward(dy, caches[-1])
        k = len(caches) - 1
        for lin in reversed(self.linears[:-1]):
            k -= 1
            dh = activation_backward(dh, caches[k])
            k -= 1
            dh = lin.backward(dh, caches[k])
        return dh
