"""Teacher pseudolabeling, student dataset assembly and student training."""

from __future__ import annotations

import enum
import json
from collections.abc import Callable, Iterable, Iterator, Sequence
from dataclasses import dataclass
from pathlib import Path

from .model import Classifier, copy_params, init_params, predict_proba
from .numcore import ContractError, Rng
from .textpipe import DataFormatError, LabeledExample, Sentiment, encode_examples, iter_jsonl, split
from .training import EpochRecord, TrainConfig, chain_thaw_train, evaluate_accuracy


class StudentMode(enum.Enum):
    TEACHER_FINETUNED = "finetune"
    INDEPENDENT_NOISY_STUDENT = "noisy"


@dataclass(frozen=True)
class PseudoLabelRecord:
    doc_id: str
    text: str
    label: Sentiment
    confidence: float

    def to_json(self) -> str:
        return json.dumps({"id": self.doc_id, "text": self.text, "label": self.label.label,
                           "confidence": self.confidence}, ensure_ascii=False)


def pseudolabel_corpus(
    teacher: Classifier,
    docs: Iterable[tuple[str, str]],
    batch_size: int = 256,
    confidence_threshold: float | None = None,
) -> Iterator[PseudoLabelRecord]:
    """Label ``(doc_id, text)`` pairs with the teacher's argmax, in input order.

    Memory stays bounded by ``batch_size`` documents. Records whose top
    probability is below ``confidence_threshold`` are dropped.
    """
    if confidence_threshold is not None and not 0.0 < confidence_threshold <= 1.0:
        raise ContractError("confidence_threshold must be in (0, 1]")
    if batch_size < 1:
        raise ContractError("batch_size must be >= 1")
    chunk: list[tuple[str, str]] = []

    def flush():
        data = teacher.encode([t for _, t in chunk])
        probs = predict_proba(data, teacher.params, teacher.config, batch_size)
        labels = probs.argmax(axis=1)
        for (doc_id, text), row, y in zip(chunk, probs, labels):
            conf = float(row[y])
            if confidence_threshold is None or conf >= confidence_threshold:
                yield PseudoLabelRecord(doc_id, text, Sentiment(int(y)), conf)

    for doc in docs:
        chunk.append(doc)
        if len(chunk) == batch_size:
            yield from flush()
            chunk = []
    if chunk:
        yield from flush()


def iter_corpus(path: str | Path) -> Iterator[tuple[str, str]]:
    """Unlabeled JSONL reader that reports the failing document index."""
    idx = 0
    try:
        for idx, (_, obj) in enumerate(iter_jsonl(path)):
            text = obj.get("text")
            if not isinstance(text, str):
                raise DataFormatError(f"document {idx} has no text field")
            yield str(obj.get("id", idx)), text
    except OSError as exc:
        raise OSError(f"cannot read corpus {path} at document {idx}: {exc}") from exc


def write_pseudolabels(path: str | Path, records: Iterable[PseudoLabelRecord]) -> int:
    n = 0
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(rec.to_json() + "\n")
            n += 1
    return n


def read_pseudolabels(path: str | Path) -> list[PseudoLabelRecord]:
    out = []
    for lineno, obj in iter_jsonl(path):
        try:
            out.append(PseudoLabelRecord(str(obj["id"]), obj["text"], Sentiment.parse(obj["label"]),
                                         float(obj["confidence"])))
        except (KeyError, ValueError, TypeError) as exc:
            raise DataFormatError(f"bad pseudolabel record at line {lineno}: {exc}") from None
    return out


def assemble_student_dataset(
    mode: StudentMode,
    pseudo: Sequence[PseudoLabelRecord],
    teacher_train: Sequence[LabeledExample],
    rng: Rng | None = None,
) -> list[LabeledExample]:
    if not pseudo:
        raise ContractError("student dataset needs at least one pseudolabeled document")
    data = [LabeledExample(r.text, r.label) for r in pseudo]
    if mode is StudentMode.TEACHER_FINETUNED:
        return data
    data.extend(teacher_train)
    rng = rng if rng is not None else Rng(0)
    return [data[i] for i in rng.permutation(len(data))]


@dataclass
class StudentResult:
    model: Classifier
    trace: list[EpochRecord]


def train_student(
    mode: StudentMode,
    pseudo: Sequence[PseudoLabelRecord],
    teacher_train: Sequence[LabeledExample],
    teacher: Classifier,
    train_config: TrainConfig,
    rng: Rng,
    val_fraction: float = 0.1,
) -> StudentResult:
    """Chain-thaw a student on the mode's dataset.

    TEACHER_FINETUNED starts from the teacher's weights and sees only
    pseudolabels. INDEPENDENT_NOISY_STUDENT starts from a fresh initialization
    and sees pseudolabels plus the teacher's training set. Both train with the
    architecture's dropout active. Early stopping uses a held-out slice of
    the student's own dataset.
    """
    data = assemble_student_dataset(mode, pseudo, teacher_train, rng.derive("assemble"))
    train, val = split(data, val_fraction, rng.derive("split"))
    cfg = teacher.config
    train_enc = encode_examples(train, teacher.vocab, cfg.max_len)
    val_enc = encode_examples(val, teacher.vocab, cfg.max_len)
    if mode is StudentMode.TEACHER_FINETUNED:
        start = copy_params(teacher.params)
    else:
        start = init_params(cfg, rng.derive("init"))
    params, trace = chain_thaw_train(start, cfg, train_enc, val_enc, train_config, rng.derive("train"))
    return StudentResult(Classifier(cfg, params, teacher.vocab), trace)


@dataclass(frozen=True)
class ComparisonRow:
    dataset: str
    accuracies: dict[str, float]


def compare_models(
    models: Sequence[tuple[str, Classifier]],
    datasets: Sequence[tuple[str, Sequence[LabeledExample]]],
    evaluate: Callable[[Classifier, Sequence[LabeledExample]], float] | None = None,
) -> list[ComparisonRow]:
    """Accuracy of every model on every dataset, one row per dataset in order."""
    for name, data in datasets:
        if not data:
            raise ContractError(f"evaluation dataset {name!r} is empty")
    if evaluate is None:
        evaluate = lambda m, data: evaluate_accuracy(m.params, m.config, encode_examples(data, m.vocab, m.config.max_len))
    return [ComparisonRow(dname, {mname: float(evaluate(m, data)) for mname, m in models})
            for dname, data in datasets]

