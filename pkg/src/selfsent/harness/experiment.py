"""End-to-end teacher -> pseudolabels -> students -> comparison runs.

Every stage writes its artifact into the output directory and is skipped
when that artifact already exists, so an interrupted run resumes where it
stopped. Stage randomness comes from ``derive_seed(root_seed, stage_name)``.
"""

from __future__ import annotations

import itertools
import json
import logging
import os
from contextlib import contextmanager
from dataclasses import dataclass, field, fields
from pathlib import Path

from ..model import Classifier, ModelConfig, init_params
from ..modelio import load_model, save_model
from ..numcore import Rng
from ..selftrain import (
    StudentMode,
    compare_models,
    iter_corpus,
    pseudolabel_corpus,
    read_pseudolabels,
    train_student,
    write_pseudolabels,
)
from ..textpipe import build_vocab, encode_examples, load_dataset, split, tokenize
from ..training import TrainConfig, chain_thaw_train, write_trace
from .report import render_json, render_markdown

log = logging.getLogger(__name__)

TEACHER_TEST = "TEACHER-TEST"
MODE_KEYS = {StudentMode.TEACHER_FINETUNED: "teacher_finetuned", StudentMode.INDEPENDENT_NOISY_STUDENT: "noisy_student"}
MODEL_FILES = {"teacher": "teacher.pfrg", "teacher_finetuned": "student_finetune.pfrg", "noisy_student": "student_noisy.pfrg"}


class ConfigError(ValueError):
    pass


class ExperimentError(RuntimeError):
    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage


@dataclass(frozen=True)
class EvalDataset:
    name: str
    path: str
    format: str = "jsonl"


@dataclass
class ExperimentConfig:
    teacher_train: str
    unlabeled: str
    output_dir: str
    eval_datasets: list[EvalDataset]
    teacher_val: str | None = None
    teacher_test: str | None = None
    model: dict = field(default_factory=dict)
    train: dict = field(default_factory=dict)
    vocab_min_freq: int = 2
    vocab_max_size: int = 50_000
    student_modes: list[str] = field(default_factory=lambda: ["finetune", "noisy"])
    seed: int = 0
    threshold: float | None = None
    val_fraction: float = 0.1
    pseudo_batch_size: int = 256

    def validate(self) -> None:
        problems = []
        if not self.eval_datasets and not self.teacher_test:
            problems.append("at least one evaluation dataset is required")
        paths = [self.teacher_train, self.unlabeled, self.teacher_val, self.teacher_test]
        paths += [d.path for d in self.eval_datasets]
        paths = [os.path.abspath(p) for p in paths if p]
        if len(set(paths)) != len(paths):
            problems.append("dataset paths must be distinct")
        names = [d.name for d in self.eval_datasets] + ([TEACHER_TEST] if self.teacher_test else [])
        if len(set(names)) != len(names):
            problems.append("evaluation dataset names must be distinct")
        for m in self.student_modes:
            if m not in {s.value for s in StudentMode}:
                problems.append(f"unknown student mode {m!r}")
        if self.threshold is not None and not 0.0 < self.threshold <= 1.0:
            problems.append("threshold must be in (0, 1]")
        try:
            self.train_config()
            ModelConfig(vocab_size=2, **self.model)
        except (TypeError, ValueError) as exc:
            problems.append(str(exc))
        if problems:
            raise ConfigError("invalid experiment config: " + "; ".join(problems))

    def train_config(self) -> TrainConfig:
        return TrainConfig(**{**self.train, "seed": self.seed})

    def modes(self) -> list[StudentMode]:
        return [StudentMode(m) for m in self.student_modes]

    @classmethod
    def from_dict(cls, data: dict, base_dir: str | Path = ".") -> "ExperimentConfig":
        data = dict(data)
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown config fields: {', '.join(unknown)}")
        base = Path(base_dir)
        resolve = lambda p: None if p is None else str(base / p)
        for key in ("teacher_train", "unlabeled", "output_dir", "teacher_val", "teacher_test"):
            if key in data:
                data[key] = resolve(data[key])
        try:
            data["eval_datasets"] = [
                EvalDataset(d["name"], resolve(d["path"]), d.get("format", "jsonl")) for d in data.get("eval_datasets", [])
            ]
            cfg = cls(**data)
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"invalid experiment config: {exc}") from None
        cfg.validate()
        return cfg

    @classmethod
    def from_file(cls, path: str | Path) -> "ExperimentConfig":
        path = Path(path)
        try:
            data = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: not valid JSON ({exc.msg} at line {exc.lineno})") from None
        return cls.from_dict(data, path.parent)


@contextmanager
def dir_lock(out_dir: Path):
    lock = out_dir / ".lock"
    try:
        fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise ExperimentError("lock", RuntimeError(f"{out_dir} is in use by another run (remove {lock} if stale)")) from None
    try:
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        yield
    finally:
        lock.unlink(missing_ok=True)


@contextmanager
def stage(name: str):
    log.info("stage %s", name)
    try:
        yield
    except ExperimentError:
        raise
    except Exception as exc:
        raise ExperimentError(name, exc) from exc


def train_teacher(train_examples, val_examples, vocab, model_overrides: dict, train_config: TrainConfig, rng: Rng):
    cfg = ModelConfig(vocab_size=vocab.size, **model_overrides)
    tr = encode_examples(train_examples, vocab, cfg.max_len)
    va = encode_examples(val_examples, vocab, cfg.max_len)
    params, trace = chain_thaw_train(init_params(cfg, rng.derive("init")), cfg, tr, va, train_config, rng.derive("train"))
    return Classifier(cfg, params, vocab), trace


def run_experiment(config: ExperimentConfig) -> dict:
    """Run (or resume) the full pipeline; returns the report dictionary."""
    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    root = Rng(config.seed)
    tc = config.train_config()
    with dir_lock(out):
        with stage("load-data"):
            teacher_train = load_dataset(config.teacher_train)
            evals = [(d.name, load_dataset(d.path, d.format)) for d in config.eval_datasets]
            if config.teacher_test:
                evals.append((TEACHER_TEST, load_dataset(config.teacher_test)))

        teacher_path = out / MODEL_FILES["teacher"]
        with stage("train-teacher"):
            if teacher_path.exists():
                teacher = load_model(teacher_path)
            else:
                if config.teacher_val:
                    tr, va = teacher_train, load_dataset(config.teacher_val)
                else:
                    tr, va = split(teacher_train, config.val_fraction, root.derive("teacher-split"))
                corpus_tokens = (tokenize(t) for _, t in iter_corpus(config.unlabeled))
                vocab = build_vocab(
                    itertools.chain((tokenize(e.text) for e in teacher_train), corpus_tokens),
                    config.vocab_min_freq,
                    config.vocab_max_size,
                )
                teacher, trace = train_teacher(tr, va, vocab, config.model, tc, root.derive("teacher"))
                write_trace(out / "teacher_trace.jsonl", trace)
                save_model(teacher, teacher_path)

        pseudo_path = out / "pseudo.jsonl"
        with stage("pseudolabel"):
            if not pseudo_path.exists():
                tmp = pseudo_path.with_name(pseudo_path.name + ".tmp")
                records = pseudolabel_corpus(teacher, iter_corpus(config.unlabeled), config.pseudo_batch_size,
                                             config.threshold)
                write_pseudolabels(tmp, records)
                tmp.replace(pseudo_path)
            pseudo = read_pseudolabels(pseudo_path)

        models = [("teacher", teacher)]
        for mode in config.modes():
            key = MODE_KEYS[mode]
            path = out / MODEL_FILES[key]
            with stage(f"train-student-{mode.value}"):
                if path.exists():
                    student = load_model(path)
                else:
                    result = train_student(mode, pseudo, teacher_train, teacher, tc, root.derive(f"student-{mode.value}"),
                                           config.val_fraction)
                    student = result.model
                    write_trace(out / f"student_{mode.value}_trace.jsonl", result.trace)
                    save_model(student, path)
            models.append((key, student))

        with stage("evaluate"):
            rows = compare_models(models, evals)
        with stage("report"):
            keys = [k for k, _ in models]
            extra = {
                "seed": config.seed,
                "pseudolabels": len(pseudo),
                "teacher_train_size": len(teacher_train),
                "in_domain_dataset": TEACHER_TEST if config.teacher_test else None,
            }
            report_json = render_json(rows, keys, **extra)
            md = render_markdown(rows, keys)
            if config.teacher_test:
                md += ("\nIn-domain row (informational): " + TEACHER_TEST
                       + " is sampled from the teacher's own training domain.\n")
            _write_atomic(out / "report.json", report_json)
            _write_atomic(out / "report.md", md)
    return json.loads(report_json)


def _write_atomic(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    tmp.replace(path)
