"""
Transformer building blocks with explicit forward/backward passes.

Parameters live in flat dictionaries keyed by dotted names; every forward
returns (output, cache) and the matching backward accumulates gradients into
a dictionary with the same keys and returns the gradient of its input.
"""

from typing import Dict, Optional, Tuple

import numpy as np

Params = Dict[str, np.ndarray]
Grads = Dict[str, np.ndarray]

LN_EPS = 1e-5


def accumulate(grads: Grads, key: str, value: np.ndarray) -> None:
    if key in grads:
        grads[key] = grads[key] + value
    else:
        grads[key] = np.array(value, dtype=np.float64, copy=True)


def layer_norm_forward(
    x: np.ndarray, gain: np.ndarray, bias: np.ndarray
) -> Tuple[np.ndarray, tuple]:
    mean = x.mean(axis=-1, keepdims=True)
    centered = x - mean
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + LN_EPS)
    normed = centered * inv
    return normed * gain + bias, (normed, inv, gain)


def layer_norm_backward(
    dy: np.ndarray, cache: tuple
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    normed, inv, gain = cache
    d = dy.shape[-1]
    dgain = (dy * normed).reshape(-1, d).sum(axis=0)
    dbias = dy.reshape(-1, d).sum(axis=0)
    dnormed = dy * gain
    dx = inv * (
        dnormed
        - dnormed.mean(axis=-1, keepdims=True)
        - normed * (dnormed * normed).mean(axis=-1, keepdims=True)
    )
    return dx, dgain, dbias


def _split_heads(t: np.ndarray, n_heads: int) -> np.ndarray:
    b, s, d = t.shape
    return t.reshape(b, s, n_heads, d // n_heads).transpose(0, 2, 1, 3)


def _merge_heads(t: np.ndarray) -> np.ndarray:
    b, h, s, hd = t.shape
    return t.transpose(0, 2, 1, 3).reshape(b, s, h * hd)


def softmax_rows(scores: np.ndarray) -> np.ndarray:
    shifted = scores - scores.max(axis=-1, keepdims=True)
    weights = np.exp(shifted)
    return weights / weights.sum(axis=-1, keepdims=True)


def attention_forward(
    x: np.ndarray,
    params: Params,
    name: str,
    n_heads: int,
    allowed: Optional[np.ndarray],
) -> Tuple[np.ndarray, tuple]:
    """
    Multi-head self-attention on a (batch, seq, d) input.

    Args:
        allowed: (batch, seq, seq) boolean mask of attendable keys, None for
            full attention
    """
    head_dim = x.shape[-1] // n_heads
    q = _split_heads(x @ params[f"{name}.wq"], n_heads)
    k = _split_heads(x @ params[f"{name}.wk"], n_heads)
    v = _split_heads(x @ params[f"{name}.wv"], n_heads)

    scores = (q @ k.transpose(0, 1, 3, 2)) / np.sqrt(head_dim)
    if allowed is not None:
        scores = np.where(allowed[:, None, :, :], scores, -np.inf)
    weights = softmax_rows(scores)
    context = _merge_heads(weights @ v)
    out = context @ params[f"{name}.wo"]
    return out, (x, q, k, v, weights, context)


def attention_backward(
    dout: np.ndarray,
    cache: tuple,
    params: Params,
    name: str,
    n_heads: int,
    grads: Grads,
) -> np.ndarray:
    x, q, k, v, weights, context = cache
    d = x.shape[-1]
    head_dim = d // n_heads

    accumulate(grads, f"{name}.wo", context.reshape(-1, d).T @ dout.reshape(-1, d))
    dcontext = _split_heads(dout @ params[f"{name}.wo"].T, n_heads)

    dweights = dcontext @ v.transpose(0, 1, 3, 2)
    dv = weights.transpose(0, 1, 3, 2) @ dcontext
    dscores = weights * (dweights - (dweights * weights).sum(axis=-1, keepdims=True))
    dscores /= np.sqrt(head_dim)
    dq = _merge_heads(dscores @ k)
    dk = _merge_heads(dscores.transpose(0, 1, 3, 2) @ q)
    dv = _merge_heads(dv)

    flat_x = x.reshape(-1, d)
    accumulate(grads, f"{name}.wq", flat_x.T @ dq.reshape(-1, d))
    accumulate(grads, f"{name}.wk", flat_x.T @ dk.reshape(-1, d))
    accumulate(grads, f"{name}.wv", flat_x.T @ dv.reshape(-1, d))
    return (
        dq @ params[f"{name}.wq"].T
        + dk @ params[f"{name}.wk"].T
        + dv @ params[f"{name}.wv"].T
    )


def block_forward(
    x: np.ndarray,
    params: Params,
    name: str,
    n_heads: int,
    allowed: Optional[np.ndarray],
) -> Tuple[np.ndarray, tuple]:
    """Pre-norm block: x + attn(ln1(x)), then h + ff(ln2(h)) with a ReLU."""
    normed1, ln1_cache = layer_norm_forward(
        x, params[f"{name}.ln1.g"], params[f"{name}.ln1.b"]
    )
    attended, attn_cache = attention_forward(
        normed1, params, f"{name}.attn", n_heads, allowed
    )
    hidden = x + attended

    normed2, ln2_cache = layer_norm_forward(
        hidden, params[f"{name}.ln2.g"], params[f"{name}.ln2.b"]
    )
    pre = normed2 @ params[f"{name}.ff.w1"] + params[f"{name}.ff.b1"]
    act = np.maximum(pre, 0.0)
    out = hidden + act @ params[f"{name}.ff.w2"] + params[f"{name}.ff.b2"]
    return out, (ln1_cache, attn_cache, ln2_cache, normed2, pre, act)


def block_backward(
    dy: np.ndarray,
    cache: tuple,
    params: Params,
    name: str,
    n_heads: int,
    grads: Grads,
) -> np.ndarray:
    ln1_cache, attn_cache, ln2_cache, normed2, pre, act = cache
    d = dy.shape[-1]
    d_ff = act.shape[-1]

    accumulate(grads, f"{name}.ff.w2", act.reshape(-1, d_ff).T @ dy.reshape(-1, d))
    accumulate(grads, f"{name}.ff.b2", dy.reshape(-1, d).sum(axis=0))
    dpre = (dy @ params[f"{name}.ff.w2"].T) * (pre > 0.0)
    accumulate(
        grads, f"{name}.ff.w1", normed2.reshape(-1, d).T @ dpre.reshape(-1, d_ff)
    )
    accumulate(grads, f"{name}.ff.b1", dpre.reshape(-1, d_ff).sum(axis=0))
    dnormed2 = dpre @ params[f"{name}.ff.w1"].T

    dhidden2, dg2, db2 = layer_norm_backward(dnormed2, ln2_cache)
    accumulate(grads, f"{name}.ln2.g", dg2)
    accumulate(grads, f"{name}.ln2.b", db2)
    dhidden = dy + dhidden2

    dnormed1 = attention_backward(
        dhidden, attn_cache, params, f"{name}.attn", n_heads, grads
    )
    dx1, dg1, db1 = layer_norm_backward(dnormed1, ln1_cache)
    accumulate(grads, f"{name}.ln1.g", dg1)
    accumulate(grads, f"{name}.ln1.b", db1)
    return dhidden + dx1


def init_block(
    params: Params, name: str, d: int, d_ff: int, rng: np.random.Generator
) -> None:
    """Fill the parameters of one block (1/sqrt(fan_in) normal weights, unit gains)."""
    for proj in ("wq", "wk", "wv", "wo"):
        params[f"{name}.attn.{proj}"] = rng.standard_normal((d, d)) / np.sqrt(d)
    params[f"{name}.ln1.g"] = np.ones(d)
    params[f"{name}.ln1.b"] = np.zeros(d)
    params[f"{name}.ln2.g"] = np.ones(d)
    params[f"{name}.ln2.b"] = np.zeros(d)
    params[f"{name}.ff.w1"] = rng.standard_normal((d, d_ff)) / np.sqrt(d)
    params[f"{name}.ff.b1"] = np.zeros(d_ff)
    params[f"{name}.ff.w2"] = rng.standard_normal((d_ff, d)) / np.sqrt(d_ff)
    params[f"{name}.ff.b2"] = np.zeros(d)
