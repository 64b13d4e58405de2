"""Versioned binary model files.

Layout (all integers little-endian)::

    b"PFRG"  u8 version
    u32 x5   vocab_size, embed_dim, hidden, num_classes, max_len
    f64 x2   embed_dropout, final_dropout
    u32      embedding dropout style (0 channel, 1 timestep)
    u32      vocabulary count, then per token: u32 byte length + UTF-8 bytes
    per group in (embed, lstm0, lstm1, attention, output):
        u32 array count, then per array:
            u32 name length + ASCII name, u8 ndim, u32 x ndim shape,
            float32 values in C order
    u64      checksum: blake2b-64 of every preceding byte
"""

from __future__ import annotations

import hashlib
import struct
from pathlib import Path

import numpy as np

from .model import GROUPS, Classifier, ModelConfig, param_shapes
from .textpipe import Vocabulary

MAGIC = b"PFRG"
FORMAT_VERSION = 1
_STYLES = ("channel", "timestep")


class ModelFormatError(ValueError):
    pass


def _checksum(data: bytes) -> bytes:
    return hashlib.blake2b(data, digest_size=8).digest()


def dumps(model: Classifier) -> bytes:
    cfg = model.config
    out = bytearray(MAGIC)
    out += struct.pack("<B", FORMAT_VERSION)
    out += struct.pack("<5I", cfg.vocab_size, cfg.embed_dim, cfg.hidden, cfg.num_classes, cfg.max_len)
    out += struct.pack("<2d", cfg.embed_dropout, cfg.final_dropout)
    out += struct.pack("<I", _STYLES.index(cfg.embed_dropout_style))
    out += struct.pack("<I", model.vocab.size)
    for tok in model.vocab.tokens:
        raw = tok.encode("utf-8")
        out += struct.pack("<I", len(raw)) + raw
    for group in GROUPS:
        arrays = model.params[group]
        out += struct.pack("<I", len(arrays))
        for name in sorted(arrays):
            arr = np.ascontiguousarray(arrays[name], dtype="<f4")
            raw_name = name.encode("ascii")
            out += struct.pack("<I", len(raw_name)) + raw_name
            out += struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape)
            out += arr.tobytes()
    out += _checksum(bytes(out))
    return bytes(out)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise ModelFormatError("truncated model file")
        chunk = self.data[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def loads(data: bytes) -> Classifier:
    if len(data) < 5 or data[:4] != MAGIC:
        raise ModelFormatError("not a model file (bad magic bytes)")
    version = data[4]
    if version != FORMAT_VERSION:
        raise ModelFormatError(f"unsupported model format version: expected {FORMAT_VERSION}, found {version}")
    if len(data) < 13:
        raise ModelFormatError("truncated model file")
    body, stored = data[:-8], data[-8:]
    r = _Reader(body)
    r.take(5)
    dims = r.unpack("<5I")
    p_embed, p_final = r.unpack("<2d")
    (style,) = r.unpack("<I")
    if style >= len(_STYLES):
        raise ModelFormatError(f"corrupt model header: unknown dropout style code {style}")
    (n_tokens,) = r.unpack("<I")
    tokens = []
    for _ in range(n_tokens):
        (length,) = r.unpack("<I")
        try:
            tokens.append(r.take(length).decode("utf-8"))
        except UnicodeDecodeError:
            raise ModelFormatError("corrupt vocabulary entry") from None
    try:
        config = ModelConfig(*dims, embed_dropout=p_embed, final_dropout=p_final,
                             embed_dropout_style=_STYLES[style])
        vocab = Vocabulary(tokens)
    except ValueError as exc:
        raise ModelFormatError(f"corrupt model header: {exc}") from None
    expected = param_shapes(config)
    params = {}
    for group in GROUPS:
        (count,) = r.unpack("<I")
        arrays = {}
        for _ in range(count):
            (nlen,) = r.unpack("<I")
            name = r.take(nlen).decode("ascii", errors="replace")
            (ndim,) = r.unpack("<B")
            shape = r.unpack(f"<{ndim}I")
            n = int(np.prod(shape, dtype=np.int64))
            arrays[name] = np.frombuffer(r.take(4 * n), dtype="<f4").reshape(shape).astype(np.float32)
        want = expected[group]
        got = {k: v.shape for k, v in arrays.items()}
        if got != want:
            raise ModelFormatError(f"group {group!r} has arrays {got}, expected {want}")
        params[group] = arrays
    if r.pos != len(body):
        raise ModelFormatError(f"{len(body) - r.pos} unexpected trailing bytes")
    if _checksum(body) != stored:
        raise ModelFormatError("checksum mismatch: model file is corrupted")
    if vocab.size != config.vocab_size:
        raise ModelFormatError(f"vocabulary has {vocab.size} tokens, config says {config.vocab_size}")
    return Classifier(config, params, vocab)


def save_model(model: Classifier, path: str | Path) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(dumps(model))
    tmp.replace(path)


def load_model(path: str | Path) -> Classifier:
    return loads(Path(path).read_bytes())
