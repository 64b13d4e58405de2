"""Dense array primitives, seeded RNG and a finite-difference gradient checker.

Matrices are plain ``numpy`` arrays. Every function here is pure apart from
the explicitly passed :class:`Rng`.
"""

from __future__ import annotations

import hashlib
from collections.abc import Callable, Mapping, Sequence
from typing import Any

import numpy as np

LOG_EPS = 1e-12
DROPOUT_STYLES = ("element", "channel", "timestep")


class ContractError(ValueError):
    """Raised when an operation is called outside its preconditions."""


class Rng:
    """Seeded random stream backed by numpy's PCG64.

    Two instances built from the same seed produce identical streams for an
    identical call sequence, on any platform.
    """

    def __init__(self, seed: int):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self.gen = np.random.Generator(np.random.PCG64(self.seed))

    def derive(self, name: str) -> "Rng":
        """Independent child stream keyed by ``(seed, name)``."""
        return Rng(derive_seed(self.seed, name))

    def uniform(self, low, high, size=None):
        return self.gen.uniform(low, high, size)

    def random(self, size=None):
        return self.gen.random(size)

    def integers(self, low, high=None, size=None):
        return self.gen.integers(low, high, size)

    def permutation(self, n: int) -> np.ndarray:
        return self.gen.permutation(n)

    def choice(self, a, size=None, replace=True, p=None):
        return self.gen.choice(a, size=size, replace=replace, p=p)


def derive_seed(root: int, name: str) -> int:
    """Stage seed = first 8 bytes of blake2b(root || name), little-endian."""
    h = hashlib.blake2b(digest_size=8)
    h.update(int(root).to_bytes(8, "little", signed=False))
    h.update(name.encode("utf-8"))
    return int.from_bytes(h.digest(), "little")


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if a.ndim != 2 or b.ndim != 2:
        raise ContractError(f"matmul expects 2-D operands, got {a.ndim}-D and {b.ndim}-D")
    if a.shape[1] != b.shape[0]:
        raise ContractError(f"matmul dimension mismatch: {a.shape} x {b.shape}")
    return a @ b


def tanh_ew(x: np.ndarray) -> np.ndarray:
    return np.tanh(x)


def hard_sigmoid_ew(x: np.ndarray) -> np.ndarray:
    """clamp(0.2 x + 0.5, 0, 1)."""
    return np.clip(0.2 * x + 0.5, 0.0, 1.0)


def hard_sigmoid_grad(x: np.ndarray) -> np.ndarray:
    """Derivative of :func:`hard_sigmoid_ew`; zero on the clamped region."""
    return np.where(np.abs(x) < 2.5, 0.2, 0.0).astype(x.dtype, copy=False)


def softmax_rows(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x)
    shifted = x - x.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def cross_entropy(probs: np.ndarray, targets: Sequence[int]) -> tuple[float, np.ndarray]:
    """Mean negative log-likelihood and its gradient w.r.t. the pre-softmax logits."""
    probs = np.asarray(probs)
    targets = np.asarray(targets, dtype=np.int64)
    if probs.ndim != 2 or targets.shape != (probs.shape[0],):
        raise ContractError(f"cross_entropy shape mismatch: probs {probs.shape}, targets {targets.shape}")
    n, c = probs.shape
    if n == 0:
        raise ContractError("cross_entropy on an empty batch")
    if targets.min() < 0 or targets.max() >= c:
        raise ContractError(f"target out of range [0, {c})")
    rows = np.arange(n)
    picked = np.maximum(probs[rows, targets], LOG_EPS)
    loss = float(-np.log(picked).mean())
    grad = probs.copy()
    grad[rows, targets] -= 1.0
    grad /= n
    return loss, grad


def dropout(
    x: np.ndarray,
    p: float,
    train: bool,
    rng: Rng | None = None,
    style: str = "element",
) -> tuple[np.ndarray, np.ndarray]:
    """Inverted dropout.

    ``style="element"`` drops individual entries. For ``x`` of shape
    (batch, time, features), ``style="channel"`` drops whole feature channels
    per sequence and ``style="timestep"`` drops whole time steps (tokens).
    The returned mask already carries the ``1/(1-p)`` scale and broadcasts
    against ``x``.
    """
    if not 0.0 <= p < 1.0:
        raise ContractError(f"dropout probability must be in [0, 1), got {p}")
    if style not in DROPOUT_STYLES:
        raise ContractError(f"unknown dropout style {style!r}")
    if not train or p == 0.0:
        return x, np.ones((), dtype=x.dtype)
    if rng is None:
        raise ContractError("train-mode dropout needs an Rng")
    if style == "channel":
        if x.ndim != 3:
            raise ContractError("channel dropout expects (batch, time, features)")
        shape = (x.shape[0], 1, x.shape[2])
    elif style == "timestep":
        if x.ndim != 3:
            raise ContractError("timestep dropout expects (batch, time, features)")
        shape = (x.shape[0], x.shape[1], 1)
    else:
        shape = x.shape
    keep = rng.random(shape) >= p
    mask = keep.astype(x.dtype) / x.dtype.type(1.0 - p)
    return x * mask, mask


def _leaves(tree: Any, prefix: tuple = ()) -> list[tuple[tuple, np.ndarray]]:
    if isinstance(tree, np.ndarray):
        return [(prefix, tree)]
    if isinstance(tree, Mapping):
        out = []
        for k in tree:
            out.extend(_leaves(tree[k], prefix + (k,)))
        return out
    raise TypeError(f"unsupported parameter container {type(tree).__name__}")


def _get(tree: Any, path: tuple) -> np.ndarray:
    for k in path:
        tree = tree[k]
    return tree


def grad_check(
    f: Callable[[Any], tuple[float, Any]],
    params: Any,
    eps: float = 1e-5,
) -> float:
    """Worst relative error between analytic and central-difference gradients.

    ``f(params)`` returns ``(loss, grads)`` with ``grads`` mirroring the
    structure of ``params`` (an array or a nested mapping of arrays). Groups
    missing from ``grads`` are treated as zero. Parameters are perturbed in
    place and restored. A non-finite loss returns ``inf``.
    """
    if eps <= 0:
        raise ContractError("eps must be positive")
    loss0, analytic = f(params)
    if not np.isfinite(loss0):
        return float("inf")
    worst = 0.0
    for path, arr in _leaves(params):
        try:
            g = _get(analytic, path)
        except (KeyError, TypeError):
            g = np.zeros_like(arr)
        if g.shape != arr.shape:
            raise ContractError(f"gradient shape {g.shape} != parameter shape {arr.shape} at {path}")
        flat = arr.reshape(-1)
        gflat = np.asarray(g).reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            fp = f(params)[0]
            flat[i] = orig - eps
            fm = f(params)[0]
            flat[i] = orig
            if not (np.isfinite(fp) and np.isfinite(fm)):
                return float("inf")
            num = (fp - fm) / (2.0 * eps)
            a = float(gflat[i])
            err = abs(a - num) / max(1e-8, abs(a) + abs(num))
            worst = max(worst, err)
    return worst
