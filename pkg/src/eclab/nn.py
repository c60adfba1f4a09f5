"""Neural building blocks composed from tensor primitives.

Parameters live in flat `dict[str, Tensor]` bundles keyed by dotted names
("spk.gru.wz", "block0.attn.wq", ...) so they checkpoint without adapters.
Weights init uniform(-1/sqrt(fan), 1/sqrt(fan)); biases and norm offsets zero.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .rng import Prng
from .tensor import (
    Tensor,
    concat,
    gather_rows,
    log,
    matmul,
    mul,
    pow_const,
    sigmoid,
    softmax,
    swapaxes,
    tanh,
    tmean,
    _node,
    _accum,
)

NEG_INF = -1e9  # additive mask value; finite so f32 softmax stays NaN-free


def uniform_init(prng: Prng, shape, scale: float, dtype) -> np.ndarray:
    return (prng.uniform(shape) * 2.0 * scale - scale).astype(dtype)


def init_affine(params: dict, name: str, fan_in: int, fan_out: int, prng: Prng,
                dtype=np.float32, scale: float | None = None) -> None:
    scale = scale if scale is not None else 1.0 / np.sqrt(fan_in)
    params[f"{name}.w"] = Tensor(uniform_init(prng, (fan_in, fan_out), scale, dtype),
                                 requires_grad=True)
    params[f"{name}.b"] = Tensor(np.zeros(fan_out, dtype=dtype), requires_grad=True)


def affine(params: dict, name: str, x: Tensor) -> Tensor:
    return matmul(x, params[f"{name}.w"]) + params[f"{name}.b"]


def init_layer_norm(params: dict, name: str, dim: int, dtype=np.float32) -> None:
    params[f"{name}.g"] = Tensor(np.ones(dim, dtype=dtype), requires_grad=True)
    params[f"{name}.b"] = Tensor(np.zeros(dim, dtype=dtype), requires_grad=True)


def layer_norm(params: dict, name: str, x: Tensor, eps: float = 1e-5) -> Tensor:
    m = tmean(x, axis=-1, keepdims=True)
    centered = x - m
    var = tmean(mul(centered, centered), axis=-1, keepdims=True)
    normed = mul(centered, pow_const(var + eps, -0.5))
    return mul(normed, params[f"{name}.g"]) + params[f"{name}.b"]


# -- GRU ----------------------------------------------------------------------


@dataclass
class GruParams:
    wz: Tensor
    bz: Tensor
    wr: Tensor
    br: Tensor
    wh: Tensor
    bh: Tensor


def init_gru(params: dict, prefix: str, in_dim: int, hidden: int, prng: Prng,
             dtype=np.float32) -> None:
    scale = 1.0 / np.sqrt(hidden)
    for gate in ("wz", "wr", "wh"):
        params[f"{prefix}.{gate}"] = Tensor(
            uniform_init(prng, (in_dim + hidden, hidden), scale, dtype), requires_grad=True)
    for gate in ("bz", "br", "bh"):
        params[f"{prefix}.{gate}"] = Tensor(np.zeros(hidden, dtype=dtype), requires_grad=True)


def gru_params(params: dict, prefix: str) -> GruParams:
    return GruParams(*(params[f"{prefix}.{k}"] for k in ("wz", "bz", "wr", "br", "wh", "bh")))


def gru_cell(x: Tensor, h: Tensor, p: GruParams) -> Tensor:
    """One GRU step: z/r gates over [x,h], candidate over [x, r*h], convex mix."""
    xh = concat([x, h], axis=-1)
    z = sigmoid(matmul(xh, p.wz) + p.bz)
    r = sigmoid(matmul(xh, p.wr) + p.br)
    xrh = concat([x, mul(r, h)], axis=-1)
    hbar = tanh(matmul(xrh, p.wh) + p.bh)
    return mul(1.0 - z, h) + mul(z, hbar)


# -- gumbel-softmax ------------------------------------------------------------


def gumbel_softmax(logits: Tensor, temperature: float, prng: Prng,
                   hard: bool = False) -> Tensor:
    """Relaxed categorical sample: softmax((logits + gumbel)/tau).

    `hard` swaps in the one-hot argmax on the forward pass while keeping the
    soft gradient (straight-through).
    """
    if temperature <= 0:
        raise ValueError(f"gumbel_softmax temperature must be > 0, got {temperature}")
    noise = prng.gumbel(logits.shape).astype(logits.dtype)
    y = softmax((logits + Tensor(noise)) * (1.0 / temperature), axis=-1)
    if not hard:
        return y
    idx = y.data.argmax(axis=-1)
    onehot = np.zeros_like(y.data)
    np.put_along_axis(onehot, idx[..., None], 1.0, axis=-1)

    def make():
        def bwd(g):
            _accum(y, g)
        return bwd

    return _node(onehot, (y,), "straight_through", make)


def one_hot(idx: np.ndarray, depth: int, dtype=np.float32) -> np.ndarray:
    out = np.zeros(idx.shape + (depth,), dtype=dtype)
    np.put_along_axis(out, np.asarray(idx)[..., None], 1.0, axis=-1)
    return out


# -- attention -----------------------------------------------------------------


def causal_mask(n: int, dtype=np.float32) -> np.ndarray:
    """(n, n) additive mask: position t sees only positions <= t."""
    return np.triu(np.full((n, n), NEG_INF, dtype=dtype), k=1)


def scaled_dot_attention(q: Tensor, k: Tensor, v: Tensor,
                         mask: np.ndarray | None = None) -> Tensor:
    """softmax(q k^T / sqrt(d) + mask) v over the last two axes."""
    d = q.shape[-1]
    scores = matmul(q, swapaxes(k, -1, -2)) * (1.0 / np.sqrt(d))
    if mask is not None:
        scores = scores + Tensor(np.asarray(mask, dtype=q.dtype))
    return matmul(softmax(scores, axis=-1), v)


def init_attention(params: dict, prefix: str, dim: int, prng: Prng, dtype=np.float32) -> None:
    for name in ("wq", "wk", "wv", "wo"):
        init_affine(params, f"{prefix}.{name}", dim, dim, prng, dtype)


def _split_heads(x: Tensor, heads: int) -> Tensor:
    b, n, d = x.shape
    return swapaxes(x.reshape((b, n, heads, d // heads)), 1, 2)


def _merge_heads(x: Tensor) -> Tensor:
    b, h, n, dh = x.shape
    return swapaxes(x, 1, 2).reshape((b, n, h * dh))


def multi_head_attention(params: dict, prefix: str, q_in: Tensor, kv_in: Tensor,
                         heads: int, mask: np.ndarray | None = None) -> Tensor:
    q = _split_heads(affine(params, f"{prefix}.wq", q_in), heads)
    k = _split_heads(affine(params, f"{prefix}.wk", kv_in), heads)
    v = _split_heads(affine(params, f"{prefix}.wv", kv_in), heads)
    out = _merge_heads(scaled_dot_attention(q, k, v, mask))
    return affine(params, f"{prefix}.wo", out)


# -- transformer blocks ----------------------------------------------------------


def init_block(params: dict, prefix: str, dim: int, ffn_dim: int, prng: Prng,
               dtype=np.float32, cross: bool = False) -> None:
    init_layer_norm(params, f"{prefix}.ln1", dim, dtype)
    init_attention(params, f"{prefix}.attn", dim, prng, dtype)
    if cross:
        init_layer_norm(params, f"{prefix}.lnx", dim, dtype)
        init_attention(params, f"{prefix}.xattn", dim, prng, dtype)
    init_layer_norm(params, f"{prefix}.ln2", dim, dtype)
    init_affine(params, f"{prefix}.ffn.w1", dim, ffn_dim, prng, dtype)
    init_affine(params, f"{prefix}.ffn.w2", ffn_dim, dim, prng, dtype)


def transformer_block(params: dict, prefix: str, x: Tensor, heads: int,
                      mask: np.ndarray | None = None,
                      memory: Tensor | None = None) -> Tensor:
    """Pre-norm block: self-attention, optional cross-attention, then FFN."""
    from .tensor import relu  # local import keeps top-of-file list short

    h = layer_norm(params, f"{prefix}.ln1", x)
    x = x + multi_head_attention(params, f"{prefix}.attn", h, h, heads, mask)
    if memory is not None:
        h = layer_norm(params, f"{prefix}.lnx", x)
        x = x + multi_head_attention(params, f"{prefix}.xattn", h, memory, heads, None)
    h = layer_norm(params, f"{prefix}.ln2", x)
    h = affine(params, f"{prefix}.ffn.w2", relu(affine(params, f"{prefix}.ffn.w1", h)))
    return x + h


def embedding_lookup(table: Tensor, tokens) -> Tensor:
    """Hard lookup for integer tokens, soft mixture for distribution rows."""
    if isinstance(tokens, Tensor):
        return matmul(tokens, table)
    return gather_rows(table, tokens)


def cross_entropy_tokens(logits: Tensor, targets: np.ndarray) -> Tensor:
    """Mean NLL (nats) of integer targets under `logits` over the last axis."""
    from .tensor import take_along_last, log_softmax
    return -tmean(take_along_last(log_softmax(logits, axis=-1), targets))


__all__ = [
    "GruParams", "affine", "causal_mask", "cross_entropy_tokens", "embedding_lookup",
    "gru_cell", "gru_params", "gumbel_softmax", "init_affine", "init_attention",
    "init_block", "init_gru", "init_layer_norm", "layer_norm", "multi_head_attention",
    "one_hot", "scaled_dot_attention", "transformer_block", "uniform_init", "NEG_INF",
]
