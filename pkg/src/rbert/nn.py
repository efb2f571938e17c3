"""Dense numpy layers with hand-written backward passes, plus Adam.

Forward functions return ``(out, cache)``; the matching backward takes the
upstream gradient and the cache, accumulates parameter gradients in place
and returns the gradient with respect to the input.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

LN_EPS = 1e-6
MASK_FILL = -1e9
_GELU_C = float(np.sqrt(2.0 / np.pi))  # python float: keeps float32 arrays float32


class Parameter:
    """A trainable tensor with its gradient and Adam moments."""

    __slots__ = ("name", "value", "grad", "m", "v")

    def __init__(self, value: np.ndarray, name: str = ""):
        self.name = name
        self.value = value
        self.grad = np.zeros_like(value)
        self.m = np.zeros_like(value)
        self.v = np.zeros_like(value)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    def zero_grad(self) -> None:
        self.grad.fill(0)

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.value.shape}, dtype={self.value.dtype})"


def glorot(rng: np.random.Generator, shape: tuple[int, ...], dtype) -> np.ndarray:
    fan_out, fan_in = shape[0], shape[-1]
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


# -- affine -----------------------------------------------------------------


def linear_forward(x: np.ndarray, W: Parameter, b: Parameter):
    """``x @ W.T + b`` over the last axis; ``W`` is (out, in)."""
    q, p = W.value.shape
    if x.shape[-1] != p or b.value.shape != (q,):
        raise ValueError(f"linear shape mismatch: x {x.shape}, W {W.value.shape}, b {b.value.shape}")
    return x @ W.value.T + b.value, (x, W, b)


def linear_backward(dout: np.ndarray, cache) -> np.ndarray:
    x, W, b = cache
    x2 = x.reshape(-1, x.shape[-1])
    d2 = dout.reshape(-1, dout.shape[-1])
    W.grad += d2.T @ x2
    b.grad += d2.sum(axis=0)
    return dout @ W.value


# -- elementwise --------------------------------------------------------------


def tanh_forward(x: np.ndarray):
    y = np.tanh(x)
    return y, y


def tanh_backward(dout: np.ndarray, y: np.ndarray) -> np.ndarray:
    return dout * (1.0 - y * y)


def gelu_forward(x: np.ndarray):
    """tanh approximation of GELU, as in the original BERT code."""
    t = np.tanh(_GELU_C * (x + 0.044715 * (x * x * x)))
    return 0.5 * x * (1.0 + t), (x, t)


def gelu_backward(dout: np.ndarray, cache) -> np.ndarray:
    x, t = cache
    dt = (1.0 - t * t) * _GELU_C * (1.0 + 3 * 0.044715 * x * x)
    return dout * (0.5 * (1.0 + t) + 0.5 * x * dt)


def dropout(x: np.ndarray, rate: float, train: bool, rng: np.random.Generator | None):
    """Inverted dropout.  Returns ``(out, mask)``; ``mask`` is None when nothing was dropped."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if not train or rate == 0.0:
        return x, None
    if rng is None:
        raise ValueError("train-mode dropout needs an rng")
    keep = rng.random(x.shape) >= rate
    mask = keep.astype(x.dtype) / x.dtype.type(1.0 - rate)
    return x * mask, mask


def dropout_backward(dout: np.ndarray, mask) -> np.ndarray:
    return dout if mask is None else dout * mask


# -- normalisation / softmax ---------------------------------------------------


def layer_norm_forward(x: np.ndarray, gamma: Parameter, beta: Parameter, eps: float = LN_EPS):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv
    return xhat * gamma.value + beta.value, (xhat, inv, gamma, beta)


def layer_norm_backward(dout: np.ndarray, cache) -> np.ndarray:
    xhat, inv, gamma, beta = cache
    d = xhat.shape[-1]
    gamma.grad += (dout * xhat).reshape(-1, d).sum(axis=0)
    beta.grad += dout.reshape(-1, d).sum(axis=0)
    dxhat = dout * gamma.value
    return inv * (dxhat - dxhat.mean(axis=-1, keepdims=True) - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))


def softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    z = x - x.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def softmax_cross_entropy(logits: np.ndarray, targets: np.ndarray):
    """Mean negative log-likelihood over rows and its gradient ``(p - onehot) / n``."""
    targets = np.asarray(targets)
    n, L = logits.shape
    if targets.shape != (n,):
        raise ValueError(f"targets shape {targets.shape} does not match {n} rows")
    if np.any(targets < 0) or np.any(targets >= L):
        raise ValueError(f"target out of range [0, {L})")
    z = logits - logits.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(z).sum(axis=1))
    rows = np.arange(n)
    loss = float(np.mean(logsum - z[rows, targets]))
    grad = np.exp(z - logsum[:, None])
    grad[rows, targets] -= 1.0
    return loss, grad / n


# -- transformer encoder block -------------------------------------------------

BLOCK_PARAMS = (
    "q_W", "q_b", "k_W", "k_b", "v_W", "v_b", "o_W", "o_b",
    "ln1_g", "ln1_b", "ff1_W", "ff1_b", "ff2_W", "ff2_b", "ln2_g", "ln2_b",
)


def init_block(rng: np.random.Generator, d: int, ff: int, dtype, prefix: str = "") -> dict[str, Parameter]:
    p = {}
    for name in ("q", "k", "v", "o"):
        p[f"{name}_W"] = glorot(rng, (d, d), dtype)
        p[f"{name}_b"] = np.zeros(d, dtype)
    p["ff1_W"] = glorot(rng, (ff, d), dtype)
    p["ff1_b"] = np.zeros(ff, dtype)
    p["ff2_W"] = glorot(rng, (d, ff), dtype)
    p["ff2_b"] = np.zeros(d, dtype)
    for ln in ("ln1", "ln2"):
        p[f"{ln}_g"] = np.ones(d, dtype)
        p[f"{ln}_b"] = np.zeros(d, dtype)
    return {k: Parameter(p[k], prefix + k) for k in BLOCK_PARAMS}


def attention_forward(x: np.ndarray, mask: np.ndarray, p: dict[str, Parameter], num_heads: int):
    """Multi-head scaled dot-product self-attention; ``mask`` is (B, n), 1 = attend."""
    B, n, d = x.shape
    if d % num_heads:
        raise ValueError(f"hidden size {d} not divisible by {num_heads} heads")
    if mask.shape != (B, n):
        raise ValueError(f"mask shape {mask.shape} does not match input {(B, n)}")
    dh = d // num_heads

    def split(t):
        return t.reshape(B, n, num_heads, dh).transpose(0, 2, 1, 3)

    q, cq = linear_forward(x, p["q_W"], p["q_b"])
    k, ck = linear_forward(x, p["k_W"], p["k_b"])
    v, cv = linear_forward(x, p["v_W"], p["v_b"])
    q, k, v = split(q), split(k), split(v)
    scale = x.dtype.type(1.0 / np.sqrt(dh))
    scores = (q @ k.transpose(0, 1, 3, 2)) * scale
    scores = scores + ((1 - mask) * MASK_FILL).astype(x.dtype)[:, None, None, :]
    probs = softmax(scores)
    ctx = (probs @ v).transpose(0, 2, 1, 3).reshape(B, n, d)
    out, co = linear_forward(ctx, p["o_W"], p["o_b"])
    return out, (cq, ck, cv, co, q, k, v, probs, scale, num_heads)


def attention_backward(dout: np.ndarray, cache) -> np.ndarray:
    cq, ck, cv, co, q, k, v, probs, scale, h = cache
    B, _, n, dh = q.shape
    dctx = linear_backward(dout, co).reshape(B, n, h, dh).transpose(0, 2, 1, 3)
    dprobs = dctx @ v.transpose(0, 1, 3, 2)
    dv = probs.transpose(0, 1, 3, 2) @ dctx
    dscores = probs * (dprobs - (dprobs * probs).sum(axis=-1, keepdims=True)) * scale
    dq = dscores @ k
    dk = dscores.transpose(0, 1, 3, 2) @ q

    def merge(t):
        return t.transpose(0, 2, 1, 3).reshape(B, n, h * dh)

    return linear_backward(merge(dq), cq) + linear_backward(merge(dk), ck) + linear_backward(merge(dv), cv)


def encoder_block_forward(
    x: np.ndarray,
    mask: np.ndarray,
    p: dict[str, Parameter],
    num_heads: int,
    rate: float = 0.0,
    train: bool = False,
    rng: np.random.Generator | None = None,
):
    """Post-LN transformer block: LN(x + attn(x)), then LN(h + ffn(h))."""
    a, c_att = attention_forward(x, mask, p, num_heads)
    a, m1 = dropout(a, rate, train, rng)
    h, c_ln1 = layer_norm_forward(x + a, p["ln1_g"], p["ln1_b"])
    f, c_ff1 = linear_forward(h, p["ff1_W"], p["ff1_b"])
    f, c_gelu = gelu_forward(f)
    f, c_ff2 = linear_forward(f, p["ff2_W"], p["ff2_b"])
    f, m2 = dropout(f, rate, train, rng)
    out, c_ln2 = layer_norm_forward(h + f, p["ln2_g"], p["ln2_b"])
    return out, (c_att, m1, c_ln1, c_ff1, c_gelu, c_ff2, m2, c_ln2)


def encoder_block_backward(dout: np.ndarray, cache) -> np.ndarray:
    c_att, m1, c_ln1, c_ff1, c_gelu, c_ff2, m2, c_ln2 = cache
    dz = layer_norm_backward(dout, c_ln2)
    df = dropout_backward(dz, m2)
    df = linear_backward(df, c_ff2)
    df = gelu_backward(df, c_gelu)
    dh = dz + linear_backward(df, c_ff1)
    dy = layer_norm_backward(dh, c_ln1)
    da = dropout_backward(dy, m1)
    return dy + attention_backward(da, c_att)


# -- optimiser ----------------------------------------------------------------


@dataclass(frozen=True)
class AdamConfig:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ValueError("betas must lie in (0, 1)")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")


def adam_step(params, config: AdamConfig, step: int) -> None:
    """One bias-corrected Adam update (``step`` counts from 1); zeroes gradients after."""
    if step < 1:
        raise ValueError("Adam step counts from 1")
    b1, b2 = config.beta1, config.beta2
    c1 = 1.0 - b1**step
    c2 = 1.0 - b2**step
    for p in params:
        g = p.grad
        p.m *= b1
        p.m += (1.0 - b1) * g
        p.v *= b2
        p.v += (1.0 - b2) * (g * g)
        p.value -= (config.learning_rate * (p.m / c1) / (np.sqrt(p.v / c2) + config.epsilon)).astype(p.value.dtype)
        p.zero_grad()
