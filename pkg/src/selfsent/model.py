"""BiLSTM + attention sentiment classifier with hand-written backward passes.

Layout: tanh-squashed embedding -> channel dropout -> two bidirectional
LSTM layers with hard-sigmoid gates -> attention pooling over the
concatenation [embedding, lstm0, lstm1] -> dropout -> linear classifier.

Parameters live in a plain dict of five layer groups::

    embed      E  (vocab, embed_dim)
    lstm0      W  (2, embed_dim, 4H)   U (2, H, 4H)   b (2, 4H)
    lstm1      W  (2, 2H, 4H)          U (2, H, 4H)   b (2, 4H)
    attention  w  (embed_dim + 4H,)
    output     W  (embed_dim + 4H, C)  b (C,)

Axis 0 of the LSTM arrays is the direction (0 forward, 1 backward) and the
gate blocks along the last axis are ordered input, forget, output, candidate.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Any

import numpy as np

from .numcore import (
    ContractError,
    Rng,
    dropout,
    hard_sigmoid_ew,
    softmax_rows,
)
from .textpipe import EncodedDataset, Sentiment, Vocabulary, encode, encode_texts, tokenize

GROUPS = ("embed", "lstm0", "lstm1", "attention", "output")

Params = dict[str, dict[str, np.ndarray]]


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int
    embed_dim: int = 256
    hidden: int = 512
    num_classes: int = 3
    max_len: int = 64
    embed_dropout: float = 0.1
    final_dropout: float = 0.5
    embed_dropout_style: str = "channel"

    def __post_init__(self):
        for name in ("vocab_size", "embed_dim", "hidden", "num_classes", "max_len"):
            if getattr(self, name) < 1:
                raise ContractError(f"{name} must be >= 1")
        for name in ("embed_dropout", "final_dropout"):
            if not 0.0 <= getattr(self, name) < 1.0:
                raise ContractError(f"{name} must be in [0, 1)")
        if self.embed_dropout_style not in ("channel", "timestep"):
            raise ContractError(f"embed_dropout_style must be 'channel' or 'timestep', got {self.embed_dropout_style!r}")

    @property
    def attention_dim(self) -> int:
        return self.embed_dim + 4 * self.hidden

    def with_overrides(self, **kw) -> "ModelConfig":
        return replace(self, **kw)


def param_shapes(config: ModelConfig) -> dict[str, dict[str, tuple[int, ...]]]:
    d, h, a = config.embed_dim, config.hidden, config.attention_dim
    lstm = lambda d_in: {"W": (2, d_in, 4 * h), "U": (2, h, 4 * h), "b": (2, 4 * h)}
    return {
        "embed": {"E": (config.vocab_size, d)},
        "lstm0": lstm(d),
        "lstm1": lstm(2 * h),
        "attention": {"w": (a,)},
        "output": {"W": (a, config.num_classes), "b": (config.num_classes,)},
    }


def init_params(config: ModelConfig, rng: Rng, dtype=np.float32) -> Params:
    """Uniform(-s, s) with s = 1/sqrt(fan_in); biases zero, forget-gate biases 1.

    fan_in is the number of rows of a weight matrix (the vocabulary size for
    the embedding table, the feature width for the attention vector).
    """
    params: Params = {}
    h = config.hidden
    for group, shapes in param_shapes(config).items():
        params[group] = {}
        for name, shape in shapes.items():
            if name == "b":
                arr = np.zeros(shape, dtype=dtype)
                if group.startswith("lstm"):
                    arr[:, h : 2 * h] = 1.0
            else:
                fan_in = shape[-2] if len(shape) >= 2 else shape[0]
                s = 1.0 / np.sqrt(fan_in)
                arr = rng.uniform(-s, s, shape).astype(dtype)
            params[group][name] = arr
    return params


def copy_params(params: Params) -> Params:
    return {g: {k: v.copy() for k, v in arrs.items()} for g, arrs in params.items()}


def cast_params(params: Params, dtype) -> Params:
    return {g: {k: v.astype(dtype) for k, v in arrs.items()} for g, arrs in params.items()}


def params_equal(a: Params, b: Params, groups=GROUPS) -> bool:
    """Bit-exact equality over the given groups."""
    return all(
        a[g].keys() == b[g].keys() and all(np.array_equal(a[g][k], b[g][k]) for k in a[g]) for g in groups
    )


# --------------------------------------------------------------------------
# Embedding


def embed_forward(ids, mask, params: Params, config: ModelConfig, train: bool, rng: Rng | None):
    E = params["embed"]["E"]
    ids = np.asarray(ids)
    if ids.size and (ids.min() < 0 or ids.max() >= E.shape[0]):
        raise ContractError(f"token id out of range [0, {E.shape[0]})")
    act = np.tanh(E[ids])
    out, drop_mask = dropout(act, config.embed_dropout, train, rng, style=config.embed_dropout_style)
    return out, (ids, act, drop_mask)


def embed_backward(d_out, cache, vocab_size: int):
    ids, act, drop_mask = cache
    d_pre = d_out * drop_mask * (1.0 - act * act)
    dE = np.zeros((vocab_size, act.shape[-1]), dtype=act.dtype)
    np.add.at(dE, ids.reshape(-1), d_pre.reshape(-1, act.shape[-1]))
    return {"E": dE}


# --------------------------------------------------------------------------
# Bidirectional LSTM


@dataclass
class LSTMCache:
    xs: np.ndarray  # (2, B, T, D_in) inputs, backward direction time-reversed
    ms: np.ndarray  # (2, B, T, 1)
    z: np.ndarray  # (2, B, T, 4H) gate pre-activations
    gates: np.ndarray  # (2, B, T, 4H) activated gates
    c_prev: np.ndarray  # (2, B, T, H)
    h_prev: np.ndarray  # (2, B, T, H)
    tanh_c: np.ndarray  # (2, B, T, H)


def bilstm_forward(x: np.ndarray, mask: np.ndarray, layer: dict[str, np.ndarray]):
    """Run both directions; returns (B, T, 2H) outputs and the backward cache.

    Padded steps (mask 0) leave the state untouched and emit zeros, so the
    backward direction starts from a zero state at the last real token.
    """
    W, U, b = layer["W"], layer["U"], layer["b"]
    if x.ndim != 3 or x.shape[-1] != W.shape[1]:
        raise ContractError(f"LSTM input width {x.shape[-1]} != expected {W.shape[1]}")
    B, T, _ = x.shape
    H = U.shape[1]
    dtype = W.dtype
    m = np.asarray(mask, dtype=dtype)
    xs = np.stack([x, x[:, ::-1]])
    ms = np.stack([m, m[:, ::-1]])[..., None]
    xw = np.matmul(xs, W[:, None]) + b[:, None, None, :]

    z = np.empty((2, B, T, 4 * H), dtype=dtype)
    gates = np.empty_like(z)
    c_prev = np.empty((2, B, T, H), dtype=dtype)
    h_prev = np.empty_like(c_prev)
    tanh_c = np.empty_like(c_prev)
    out = np.empty_like(c_prev)
    h = np.zeros((2, B, H), dtype=dtype)
    c = np.zeros((2, B, H), dtype=dtype)
    for t in range(T):
        zt = xw[:, :, t] + np.matmul(h, U)
        gt = np.empty_like(zt)
        gt[..., : 3 * H] = hard_sigmoid_ew(zt[..., : 3 * H])
        gt[..., 3 * H :] = np.tanh(zt[..., 3 * H :])
        i, f, o, g = gt[..., :H], gt[..., H : 2 * H], gt[..., 2 * H : 3 * H], gt[..., 3 * H :]
        c_new = f * c + i * g
        tc = np.tanh(c_new)
        h_new = o * tc
        mt = ms[:, :, t]
        z[:, :, t], gates[:, :, t] = zt, gt
        c_prev[:, :, t], h_prev[:, :, t], tanh_c[:, :, t] = c, h, tc
        out[:, :, t] = mt * h_new
        keep = mt > 0
        c = np.where(keep, c_new, c)
        h = np.where(keep, h_new, h)
    y = np.concatenate([out[0], out[1][:, ::-1]], axis=-1)
    return y, LSTMCache(xs, ms, z, gates, c_prev, h_prev, tanh_c)


def bilstm_backward(d_out: np.ndarray, cache: LSTMCache, layer: dict[str, np.ndarray], need_dx: bool = True):
    W, U = layer["W"], layer["U"]
    H = U.shape[1]
    _, B, T, D = cache.xs.shape
    douts = np.stack([d_out[..., :H], d_out[:, ::-1, H:]])
    dz = np.empty_like(cache.z)
    dh = np.zeros((2, B, H), dtype=W.dtype)
    dc = np.zeros_like(dh)
    Ut = np.swapaxes(U, 1, 2)
    for t in range(T - 1, -1, -1):
        mt = cache.ms[:, :, t]
        gt = cache.gates[:, :, t]
        i, f, o, g = gt[..., :H], gt[..., H : 2 * H], gt[..., 2 * H : 3 * H], gt[..., 3 * H :]
        tc = cache.tanh_c[:, :, t]
        dh_new = mt * (douts[:, :, t] + dh)
        dc_new = mt * dc + dh_new * o * (1.0 - tc * tc)
        dzt = dz[:, :, t]
        dzt[..., :H] = dc_new * g
        dzt[..., H : 2 * H] = dc_new * cache.c_prev[:, :, t]
        dzt[..., 2 * H : 3 * H] = dh_new * tc
        zt = cache.z[:, :, t, : 3 * H]
        dzt[..., : 3 * H] *= np.where(np.abs(zt) < 2.5, 0.2, 0.0).astype(W.dtype)
        dzt[..., 3 * H :] = dc_new * i * (1.0 - g * g)
        dc = (1.0 - mt) * dc + dc_new * f
        dh = (1.0 - mt) * dh + np.matmul(dzt, Ut)
    dz_flat = dz.reshape(2, B * T, 4 * H)
    grads = {
        "W": np.matmul(np.swapaxes(cache.xs.reshape(2, B * T, D), 1, 2), dz_flat),
        "U": np.matmul(np.swapaxes(cache.h_prev.reshape(2, B * T, H), 1, 2), dz_flat),
        "b": dz.sum(axis=(1, 2)),
    }
    dx = None
    if need_dx:
        dxs = np.matmul(dz, np.swapaxes(W, 1, 2)[:, None])
        dx = dxs[0] + dxs[1][:, ::-1]
    return dx, grads


# --------------------------------------------------------------------------
# Attention pooling


def attention_forward(embed_out, lstm0_out, lstm1_out, mask, w: np.ndarray):
    """Softmax-weighted average of the concatenated per-step features.

    Returns (pooled (B, A), weights (B, T), cache). Padded steps get weight 0.
    """
    feats = np.concatenate([embed_out, lstm0_out, lstm1_out], axis=-1)
    if feats.shape[-1] != w.shape[0]:
        raise ContractError(f"attention width {feats.shape[-1]} != score vector length {w.shape[0]}")
    valid = np.asarray(mask) > 0
    if not valid.any(axis=1).all():
        raise ContractError("attention over a fully masked sequence")
    scores = feats @ w
    scores = np.where(valid, scores, -np.inf)
    weights = softmax_rows(scores)
    pooled = np.einsum("bt,bta->ba", weights, feats)
    return pooled, weights, (feats, weights)


def attention_backward(d_pooled, cache, w):
    feats, weights = cache
    d_feats = weights[:, :, None] * d_pooled[:, None, :]
    d_weights = np.einsum("bta,ba->bt", feats, d_pooled)
    d_scores = weights * (d_weights - (weights * d_weights).sum(axis=1, keepdims=True))
    dw = np.einsum("bt,bta->a", d_scores, feats)
    d_feats += d_scores[:, :, None] * w
    return d_feats, {"w": dw}


# --------------------------------------------------------------------------
# Full model


@dataclass
class ForwardCache:
    config: ModelConfig
    mask: np.ndarray
    embed: Any
    lstm0: LSTMCache
    lstm1: LSTMCache
    attention: Any
    attention_weights: np.ndarray
    pooled: np.ndarray
    final_mask: np.ndarray
    dropped: np.ndarray
    logits: np.ndarray
    shapes: dict = field(default_factory=dict)


def model_forward(ids, mask, params: Params, config: ModelConfig, train: bool = False, rng: Rng | None = None):
    """Returns (logits (B, C), probs (B, C), ForwardCache)."""
    ids = np.asarray(ids)
    mask = np.asarray(mask)
    if ids.ndim != 2 or ids.shape[0] == 0:
        raise ContractError("model_forward needs a non-empty (batch, time) id array")
    if mask.shape != ids.shape:
        raise ContractError(f"mask shape {mask.shape} != ids shape {ids.shape}")
    e, e_cache = embed_forward(ids, mask, params, config, train, rng)
    l0, l0_cache = bilstm_forward(e, mask, params["lstm0"])
    l1, l1_cache = bilstm_forward(l0, mask, params["lstm1"])
    pooled, att_w, att_cache = attention_forward(e, l0, l1, mask, params["attention"]["w"])
    dropped, final_mask = dropout(pooled, config.final_dropout, train, rng)
    logits = dropped @ params["output"]["W"] + params["output"]["b"]
    probs = softmax_rows(logits)
    shapes = {g: {k: v.shape for k, v in arrs.items()} for g, arrs in params.items()}
    cache = ForwardCache(config, mask, e_cache, l0_cache, l1_cache, att_cache, att_w, pooled,
                         final_mask, dropped, logits, shapes)
    return logits, probs, cache


def model_backward(cache: ForwardCache, grad_logits: np.ndarray, params: Params, groups=None) -> Params:
    """Gradients of a loss w.r.t. every parameter, given d loss / d logits.

    With ``groups`` set, backpropagation stops as soon as every requested
    group is covered and only those groups are returned.
    """
    wanted = set(GROUPS if groups is None else groups)
    if not wanted <= set(GROUPS):
        raise ContractError(f"unknown groups {sorted(wanted - set(GROUPS))}")
    shapes = {g: {k: v.shape for k, v in arrs.items()} for g, arrs in params.items()}
    if shapes != cache.shapes:
        raise ContractError("forward cache does not match parameter shapes")
    if grad_logits.shape != cache.logits.shape:
        raise ContractError(f"grad_logits shape {grad_logits.shape} != logits shape {cache.logits.shape}")
    depth = max(GROUPS[::-1].index(g) for g in wanted)  # 0 output .. 4 embed
    cfg = cache.config
    out_p = params["output"]
    grads: Params = {}
    if "output" in wanted:
        grads["output"] = {"W": cache.dropped.T @ grad_logits, "b": grad_logits.sum(axis=0)}
    if depth < 1:
        return grads
    d_pooled = (grad_logits @ out_p["W"].T) * cache.final_mask
    d_feats, g_att = attention_backward(d_pooled, cache.attention, params["attention"]["w"])
    if "attention" in wanted:
        grads["attention"] = g_att
    if depth < 2:
        return grads
    D, H2 = cfg.embed_dim, 2 * cfg.hidden
    d_e = d_feats[..., :D]
    d_l0 = d_feats[..., D : D + H2]
    d_l1 = d_feats[..., D + H2 :]
    dx1, g1 = bilstm_backward(d_l1, cache.lstm1, params["lstm1"], need_dx=depth >= 3)
    if "lstm1" in wanted:
        grads["lstm1"] = g1
    if depth < 3:
        return grads
    dx0, g0 = bilstm_backward(d_l0 + dx1, cache.lstm0, params["lstm0"], need_dx=depth >= 4)
    if "lstm0" in wanted:
        grads["lstm0"] = g0
    if depth < 4:
        return grads
    grads["embed"] = embed_backward(d_e + dx0, cache.embed, cfg.vocab_size)
    return grads


# BLAS switches kernels for very small row counts; padding every inference
# chunk to at least this many rows keeps per-example results bit-identical
# whatever the batch composition.
MIN_INFER_ROWS = 8


def predict_proba(data: EncodedDataset, params: Params, config: ModelConfig, batch_size: int = 256) -> np.ndarray:
    """Eval-mode class probabilities for a whole encoded dataset."""
    n = len(data)
    out = np.empty((n, config.num_classes), dtype=params["output"]["W"].dtype)
    for start in range(0, n, batch_size):
        ids = data.ids[start : start + batch_size]
        mask = data.mask[start : start + batch_size]
        rows = ids.shape[0]
        if rows < MIN_INFER_ROWS:
            fill = np.arange(MIN_INFER_ROWS) % rows
            ids, mask = ids[fill], mask[fill]
        _, probs, _ = model_forward(ids, mask, params, config, train=False)
        out[start : start + rows] = probs[:rows]
    return out


def predict(text: str, vocab: Vocabulary, params: Params, config: ModelConfig) -> tuple[Sentiment, np.ndarray]:
    """Label and probability row for one text; ties go to the lowest class index."""
    enc = encode(tokenize(text), vocab, config.max_len)
    data = EncodedDataset(np.array([enc.token_ids]), np.array([enc.mask], dtype=np.int8))
    probs = predict_proba(data, params, config)[0]
    return Sentiment(int(np.argmax(probs))), probs


@dataclass
class Classifier:
    """A trained model bundled with the vocabulary it was built against."""

    config: ModelConfig
    params: Params
    vocab: Vocabulary

    def predict(self, text: str) -> tuple[Sentiment, np.ndarray]:
        return predict(text, self.vocab, self.params, self.config)

    def encode(self, texts, labels=None) -> EncodedDataset:
        return encode_texts(texts, self.vocab, self.config.max_len, labels)

    def clone(self) -> "Classifier":
        return Classifier(self.config, copy_params(self.params), self.vocab)
