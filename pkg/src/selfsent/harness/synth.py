"""Synthetic multi-domain sentiment corpora with controllable domain shift.

Every domain shares one sentiment lexicon (positive / negative / neutral
words) and a pool of filler words. Each non-teacher domain also owns a private
synonym for every lexicon word and swaps lexicon words for their synonyms at
rate ``synonym_rate``. A model trained only on the teacher domain has never
seen those synonyms; documents from the other domains still carry enough
shared words for a teacher to pseudolabel most of them correctly.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields
from pathlib import Path

from ..numcore import Rng
from ..textpipe import Sentiment


class SynthSpecError(ValueError):
    pass


@dataclass(frozen=True)
class SynthSpec:
    n_domains: int = 3
    teacher_domain: int = 0
    labeled_size: int = 2000
    unlabeled_size: int = 20000
    test_size: int = 1000
    lexicon_size: int = 20
    filler_size: int = 150
    topic_size: int = 30
    synonym_rate: float = 0.5
    min_len: int = 8
    max_len: int = 14
    min_sentiment_words: int = 2
    max_sentiment_words: int = 3
    distractor_rate: float = 0.3
    topic_rate: float = 0.3
    label_noise: float = 0.0
    seed: int = 0

    def problems(self) -> list[str]:
        out = []
        for name in ("n_domains", "labeled_size", "unlabeled_size", "test_size", "lexicon_size",
                     "filler_size", "topic_size", "min_len", "min_sentiment_words"):
            if getattr(self, name) < 1:
                out.append(f"{name} must be >= 1")
        if not 0 <= self.teacher_domain < self.n_domains:
            out.append("teacher_domain must index one of the n_domains domains")
        if not 0.0 <= self.synonym_rate < 1.0:
            out.append("synonym_rate must be in [0, 1)")
        for name in ("distractor_rate", "topic_rate", "label_noise"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                out.append(f"{name} must be in [0, 1]")
        if self.max_len < self.min_len:
            out.append("max_len must be >= min_len")
        if self.max_sentiment_words < self.min_sentiment_words:
            out.append("max_sentiment_words must be >= min_sentiment_words")
        if self.max_sentiment_words + 1 > self.min_len:
            out.append("min_len must leave room for sentiment words plus a distractor")
        return out

    def validate(self) -> None:
        problems = self.problems()
        if problems:
            raise SynthSpecError("invalid synth spec: " + "; ".join(problems))

    @classmethod
    def from_dict(cls, data: dict) -> "SynthSpec":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise SynthSpecError(f"unknown synth spec fields: {', '.join(unknown)}")
        spec = cls(**data)
        spec.validate()
        return spec

    def domain_names(self) -> list[str]:
        return [f"d{k}" for k in range(self.n_domains)]


_PREFIX = {Sentiment.NEGATIVE: "neg", Sentiment.NEUTRAL: "neu", Sentiment.POSITIVE: "pos"}


class DocumentSampler:
    def __init__(self, spec: SynthSpec):
        self.spec = spec
        self.lexicon = {y: [f"{p}{i}" for i in range(spec.lexicon_size)] for y, p in _PREFIX.items()}
        self.fillers = [f"w{i}" for i in range(spec.filler_size)]

    def topics(self, domain: int) -> list[str]:
        return [f"d{domain}t{i}" for i in range(self.spec.topic_size)]

    def sample(self, domain: int, rng: Rng) -> tuple[str, Sentiment]:
        s = self.spec
        label = Sentiment(int(rng.integers(3)))
        length = int(rng.integers(s.min_len, s.max_len + 1))
        k = int(rng.integers(s.min_sentiment_words, s.max_sentiment_words + 1))
        sentiment = [self.lexicon[label][int(j)] for j in rng.integers(s.lexicon_size, size=k)]
        if rng.random() < s.distractor_rate:
            other = [y for y in Sentiment if y != label][int(rng.integers(2))]
            sentiment.append(self.lexicon[other][int(rng.integers(s.lexicon_size))])
        if domain != s.teacher_domain:
            sentiment = [f"d{domain}{w}" if rng.random() < s.synonym_rate else w for w in sentiment]
        topics = self.topics(domain)
        rest = []
        for _ in range(max(0, length - len(sentiment))):
            if rng.random() < s.topic_rate:
                rest.append(topics[int(rng.integers(len(topics)))])
            else:
                rest.append(self.fillers[int(rng.integers(len(self.fillers)))])
        words = sentiment + rest
        words = [words[int(i)] for i in rng.permutation(len(words))]
        if s.label_noise and rng.random() < s.label_noise:
            label = [y for y in Sentiment if y != label][int(rng.integers(2))]
        return " ".join(words), label


def _write_labeled(path: Path, rows) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for text, label in rows:
            fh.write(json.dumps({"text": text, "label": label.label}) + "\n")


def synth_gen(spec: SynthSpec, out_dir: str | Path) -> dict:
    """Write the corpus to ``out_dir`` and return its manifest.

    Files: ``teacher_train.jsonl`` (teacher domain, labeled),
    ``unlabeled.jsonl`` (all domains round-robin, fields id/text/domain) and
    ``test_<domain>.jsonl`` per domain, plus ``manifest.json``.
    """
    spec.validate()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    root = Rng(spec.seed)
    sampler = DocumentSampler(spec)
    names = spec.domain_names()

    rng = root.derive("labeled")
    _write_labeled(out / "teacher_train.jsonl",
                   (sampler.sample(spec.teacher_domain, rng) for _ in range(spec.labeled_size)))

    rng = root.derive("unlabeled")
    with open(out / "unlabeled.jsonl", "w", encoding="utf-8") as fh:
        for i in range(spec.unlabeled_size):
            domain = i % spec.n_domains
            text, _ = sampler.sample(domain, rng)
            fh.write(json.dumps({"id": f"u{i}", "text": text, "domain": names[domain]}) + "\n")

    tests = {}
    for d, name in enumerate(names):
        rng = root.derive(f"test:{name}")
        path = out / f"test_{name}.jsonl"
        _write_labeled(path, (sampler.sample(d, rng) for _ in range(spec.test_size)))
        tests[name] = path.name

    manifest = {
        "spec": asdict(spec),
        "teacher_domain": names[spec.teacher_domain],
        "teacher_train": "teacher_train.jsonl",
        "unlabeled": "unlabeled.jsonl",
        "tests": tests,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return manifest
