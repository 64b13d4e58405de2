"""Tokenizing, vocabularies, fixed-length encoding and dataset file readers."""

from __future__ import annotations

import csv
import enum
import json
import unicodedata
from collections import Counter
from collections.abc import Iterable, Iterator, Sequence
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .numcore import ContractError, Rng

PAD, UNK = "<pad>", "<unk>"
PAD_ID, UNK_ID = 0, 1

DEFAULT_MAX_LEN = 64
DEFAULT_MIN_FREQ = 2
DEFAULT_MAX_SIZE = 50_000


class Sentiment(enum.IntEnum):
    NEGATIVE = 0
    NEUTRAL = 1
    POSITIVE = 2

    @property
    def label(self) -> str:
        return self.name.lower()

    @classmethod
    def parse(cls, name: str) -> "Sentiment":
        try:
            return cls[name.upper()]
        except (KeyError, AttributeError):
            raise ValueError(f"unknown label {name!r}") from None


LABEL_NAMES = tuple(s.label for s in Sentiment)


class DataFormatError(ValueError):
    pass


@dataclass(frozen=True)
class LabeledExample:
    text: str
    label: Sentiment


@dataclass(frozen=True)
class EncodedExample:
    token_ids: tuple[int, ...]
    mask: tuple[int, ...]
    label: Sentiment | None = None


@dataclass
class EncodedDataset:
    """Column-stacked encodings: ids and mask are (N, max_len), labels (N,)."""

    ids: np.ndarray
    mask: np.ndarray
    labels: np.ndarray | None = None

    def __len__(self) -> int:
        return self.ids.shape[0]

    def take(self, idx) -> "EncodedDataset":
        labels = None if self.labels is None else self.labels[idx]
        return EncodedDataset(self.ids[idx], self.mask[idx], labels)


def _is_punct(ch: str) -> bool:
    return unicodedata.category(ch).startswith("P")


def tokenize(text: str) -> list[str]:
    tokens: list[str] = []
    word: list[str] = []
    for ch in text.lower():
        if ch.isspace() or _is_punct(ch):
            if word:
                tokens.append("".join(word))
                word = []
            if not ch.isspace():
                tokens.append(ch)
        else:
            word.append(ch)
    if word:
        tokens.append("".join(word))
    return tokens


class Vocabulary:
    """Frozen token -> id mapping. Ids 0 and 1 are PAD and UNK."""

    __slots__ = ("_ids", "_tokens")

    def __init__(self, tokens: Sequence[str]):
        tokens = list(tokens)
        if tokens[:2] != [PAD, UNK]:
            raise ContractError("vocabulary must start with PAD and UNK")
        ids = {t: i for i, t in enumerate(tokens)}
        if len(ids) != len(tokens):
            raise ContractError("duplicate tokens in vocabulary")
        object.__setattr__(self, "_tokens", tuple(tokens))
        object.__setattr__(self, "_ids", ids)

    def __setattr__(self, name, value):
        raise AttributeError("Vocabulary is immutable")

    def __len__(self) -> int:
        return len(self._tokens)

    @property
    def size(self) -> int:
        return len(self._tokens)

    @property
    def tokens(self) -> tuple[str, ...]:
        return self._tokens

    def __contains__(self, token: str) -> bool:
        return token in self._ids

    def id_of(self, token: str) -> int:
        return self._ids.get(token, UNK_ID)

    def token_of(self, idx: int) -> str:
        return self._tokens[idx]

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocabulary) and self._tokens == other._tokens

    def __hash__(self) -> int:
        return hash(self._tokens)

    def __repr__(self) -> str:
        return f"Vocabulary(size={self.size})"


def build_vocab(
    corpus: Iterable[Sequence[str]],
    min_freq: int = DEFAULT_MIN_FREQ,
    max_size: int = DEFAULT_MAX_SIZE,
) -> Vocabulary:
    if min_freq < 1:
        raise ContractError("min_freq must be >= 1")
    if max_size < 2:
        raise ContractError("max_size must leave room for PAD and UNK")
    counts: Counter[str] = Counter()
    for tokens in corpus:
        counts.update(tokens)
    counts.pop(PAD, None)
    counts.pop(UNK, None)
    kept = sorted((t for t, c in counts.items() if c >= min_freq), key=lambda t: (-counts[t], t))
    return Vocabulary([PAD, UNK, *kept[: max_size - 2]])


def encode(
    tokens: Sequence[str],
    vocab: Vocabulary,
    max_len: int = DEFAULT_MAX_LEN,
    label: Sentiment | None = None,
) -> EncodedExample:
    if max_len < 1:
        raise ContractError("max_len must be >= 1")
    ids = [vocab.id_of(t) for t in tokens[:max_len]] or [UNK_ID]
    n = len(ids)
    pad = max_len - n
    return EncodedExample(tuple(ids + [PAD_ID] * pad), (1,) * n + (0,) * pad, label)


def encode_texts(
    texts: Sequence[str],
    vocab: Vocabulary,
    max_len: int = DEFAULT_MAX_LEN,
    labels: Sequence[int] | None = None,
) -> EncodedDataset:
    ids = np.zeros((len(texts), max_len), dtype=np.int64)
    mask = np.zeros((len(texts), max_len), dtype=np.int8)
    for i, text in enumerate(texts):
        enc = encode(tokenize(text), vocab, max_len)
        ids[i] = enc.token_ids
        mask[i] = enc.mask
    lab = None if labels is None else np.asarray([int(y) for y in labels], dtype=np.int64)
    return EncodedDataset(ids, mask, lab)


def encode_examples(
    examples: Sequence[LabeledExample], vocab: Vocabulary, max_len: int = DEFAULT_MAX_LEN
) -> EncodedDataset:
    return encode_texts([e.text for e in examples], vocab, max_len, [e.label for e in examples])


def _make_example(text, label_name, where: str) -> LabeledExample:
    if not isinstance(text, str) or not text.strip():
        raise DataFormatError(f"missing or empty text {where}")
    if not isinstance(label_name, str):
        raise DataFormatError(f"missing label {where}")
    try:
        label = Sentiment.parse(label_name)
    except ValueError:
        raise DataFormatError(f"unknown label {label_name!r} {where}") from None
    return LabeledExample(text, label)


def iter_jsonl(path: str | Path) -> Iterator[tuple[int, dict]]:
    """Yield ``(line_number, object)`` for every non-blank line."""
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataFormatError(f"malformed JSON at line {lineno}: {exc.msg}") from None
            if not isinstance(obj, dict):
                raise DataFormatError(f"expected an object at line {lineno}")
            yield lineno, obj


def iter_labeled_jsonl(path: str | Path) -> Iterator[LabeledExample]:
    for lineno, obj in iter_jsonl(path):
        yield _make_example(obj.get("text"), obj.get("label"), f"at line {lineno}")


def load_jsonl(path: str | Path) -> list[LabeledExample]:
    return list(iter_labeled_jsonl(path))


def write_jsonl(path: str | Path, examples: Iterable[LabeledExample]) -> int:
    n = 0
    with open(path, "w", encoding="utf-8") as fh:
        for ex in examples:
            fh.write(json.dumps({"text": ex.text, "label": ex.label.label}, ensure_ascii=False) + "\n")
            n += 1
    return n


def iter_unlabeled_jsonl(path: str | Path) -> Iterator[tuple[str, str]]:
    """Yield ``(doc_id, text)``; ``id`` defaults to the 0-based document index."""
    for idx, (lineno, obj) in enumerate(iter_jsonl(path)):
        text = obj.get("text")
        if not isinstance(text, str):
            raise DataFormatError(f"missing text at line {lineno} (document {idx})")
        yield str(obj.get("id", idx)), text


_S140_POLARITY = {"0": Sentiment.NEGATIVE, "2": Sentiment.NEUTRAL, "4": Sentiment.POSITIVE}


def iter_sentiment140_csv(path: str | Path) -> Iterator[LabeledExample]:
    with open(path, encoding="utf-8", newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), 1):
            if not row:
                continue
            if len(row) != 6:
                raise DataFormatError(f"expected 6 fields at line {lineno}, got {len(row)}")
            label = _S140_POLARITY.get(row[0].strip())
            if label is None:
                raise DataFormatError(f"polarity {row[0]!r} not in {{0, 2, 4}} at line {lineno}")
            if not row[5].strip():
                raise DataFormatError(f"missing or empty text at line {lineno}")
            yield LabeledExample(row[5], label)


def load_sentiment140_csv(path: str | Path) -> list[LabeledExample]:
    return list(iter_sentiment140_csv(path))


LOADERS = {"jsonl": load_jsonl, "sentiment140": load_sentiment140_csv}


def load_dataset(path: str | Path, fmt: str = "jsonl") -> list[LabeledExample]:
    try:
        loader = LOADERS[fmt]
    except KeyError:
        raise DataFormatError(f"unknown dataset format {fmt!r}") from None
    return loader(path)


def split(data: Sequence, val_fraction: float, rng: Rng) -> tuple[list, list]:
    if not 0.0 < val_fraction < 1.0:
        raise ContractError("val_fraction must be in (0, 1)")
    n = len(data)
    if n < 2:
        raise ContractError(f"need at least 2 examples to split, got {n}")
    n_val = min(n - 1, max(1, round(val_fraction * n)))
    order = rng.permutation(n)
    val = [data[i] for i in order[:n_val]]
    train = [data[i] for i in order[n_val:]]
    return train, val
