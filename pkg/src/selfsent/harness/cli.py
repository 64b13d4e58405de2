"""Command-line entry point: ``selfsent <subcommand> ...``."""

from __future__ import annotations

import argparse
import itertools
import json
import logging
import sys
from pathlib import Path

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
from ..textpipe import DEFAULT_MAX_SIZE, DEFAULT_MIN_FREQ, build_vocab, load_dataset, split, tokenize
from ..training import TrainConfig, write_trace
from .experiment import ExperimentConfig, run_experiment, train_teacher
from .report import render_json, render_markdown
from .serve import serve
from .synth import SynthSpec, synth_gen


def _read_json(path: str | None) -> dict:
    if path is None:
        return {}
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ValueError(f"{path}: not valid JSON ({exc.msg} at line {exc.lineno})") from None


def _train_config(args) -> TrainConfig:
    conf = _read_json(args.config).get("train", {})
    return TrainConfig(**{**conf, "seed": args.seed})


def _dataset_arg(spec: str) -> tuple[str, str, str]:
    """NAME=PATH[:FORMAT]"""
    name, sep, rest = spec.partition("=")
    if not sep:
        raise argparse.ArgumentTypeError(f"expected NAME=PATH[:FORMAT], got {spec!r}")
    path, fmt = rest, "jsonl"
    head, colon, tail = rest.rpartition(":")
    if colon and tail in ("jsonl", "sentiment140"):
        path, fmt = head, tail
    return name, path, fmt


def cmd_synth_data(args) -> None:
    spec = SynthSpec.from_dict(_read_json(args.spec))
    manifest = synth_gen(spec, args.out)
    print(f"wrote synthetic corpus to {args.out} (tests: {', '.join(manifest['tests'])})")


def cmd_train_teacher(args) -> None:
    conf = _read_json(args.config)
    tc = _train_config(args)
    root = Rng(args.seed)
    data = load_dataset(args.train)
    if args.val:
        tr, va = data, load_dataset(args.val)
    else:
        tr, va = split(data, conf.get("val_fraction", 0.1), root.derive("teacher-split"))
    token_streams = [(tokenize(e.text) for e in data)]
    if args.unlabeled:
        token_streams.append(tokenize(t) for _, t in iter_corpus(args.unlabeled))
    vocab = build_vocab(itertools.chain(*token_streams), conf.get("vocab_min_freq", DEFAULT_MIN_FREQ),
                        conf.get("vocab_max_size", DEFAULT_MAX_SIZE))
    teacher, trace = train_teacher(tr, va, vocab, conf.get("model", {}), tc, root.derive("teacher"))
    save_model(teacher, args.out)
    if args.trace_out:
        write_trace(args.trace_out, trace)
    print(f"saved teacher to {args.out}")


def cmd_pseudolabel(args) -> None:
    teacher = load_model(args.model)
    records = pseudolabel_corpus(teacher, iter_corpus(args.corpus), args.batch_size, args.threshold)
    n = write_pseudolabels(args.out, records)
    print(f"wrote {n} pseudolabels to {args.out}")


def cmd_train_student(args) -> None:
    mode = StudentMode(args.mode)
    teacher = load_model(args.teacher_model)
    pseudo = read_pseudolabels(args.pseudo)
    teacher_train = load_dataset(args.teacher_train)
    result = train_student(mode, pseudo, teacher_train, teacher, _train_config(args),
                           Rng(args.seed).derive(f"student-{mode.value}"))
    save_model(result.model, args.out)
    if args.trace_out:
        write_trace(args.trace_out, result.trace)
    print(f"saved {mode.value} student to {args.out}")


def cmd_evaluate(args) -> None:
    models = []
    for spec in args.model:
        name, sep, path = spec.partition("=")
        models.append((name, load_model(path)) if sep else (Path(spec).stem, load_model(spec)))
    datasets = [(name, load_dataset(path, fmt)) for name, path, fmt in args.data]
    rows = compare_models(models, datasets)
    keys = [k for k, _ in models]
    print(render_markdown(rows, keys), end="")
    if args.json_out:
        Path(args.json_out).write_text(render_json(rows, keys), encoding="utf-8")


def cmd_run_experiment(args) -> None:
    config = ExperimentConfig.from_file(args.config)
    if args.seed is not None:
        config.seed = args.seed
    run_experiment(config)
    print(Path(config.output_dir, "report.md").read_text(encoding="utf-8"), end="")


def cmd_serve(args) -> None:
    serve(load_model(args.model), args.addr)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="selfsent", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth-data", help="generate a synthetic multi-domain corpus")
    s.add_argument("--spec", help="JSON file with SynthSpec fields (defaults if omitted)")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synth_data)

    s = sub.add_parser("train-teacher", help="chain-thaw a teacher on labeled data")
    s.add_argument("--train", required=True)
    s.add_argument("--val")
    s.add_argument("--unlabeled", help="unlabeled corpus whose tokens join the vocabulary")
    s.add_argument("--config", help="JSON with optional model/train/vocab settings")
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--trace-out")
    s.set_defaults(func=cmd_train_teacher)

    s = sub.add_parser("pseudolabel", help="label an unlabeled corpus with a teacher")
    s.add_argument("--model", required=True)
    s.add_argument("--corpus", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--threshold", type=float)
    s.add_argument("--batch-size", type=int, default=256)
    s.set_defaults(func=cmd_pseudolabel)

    s = sub.add_parser("train-student", help="train a student on pseudolabels")
    s.add_argument("--mode", choices=[m.value for m in StudentMode], required=True)
    s.add_argument("--pseudo", required=True)
    s.add_argument("--teacher-train", required=True)
    s.add_argument("--teacher-model", required=True)
    s.add_argument("--config")
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--trace-out")
    s.set_defaults(func=cmd_train_student)

    s = sub.add_parser("evaluate", help="accuracy table for models x datasets")
    s.add_argument("--model", action="append", required=True, metavar="[NAME=]PATH")
    s.add_argument("--data", action="append", required=True, type=_dataset_arg, metavar="NAME=PATH[:FORMAT]")
    s.add_argument("--json-out")
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("run-experiment", help="full teacher/student pipeline from a config file")
    s.add_argument("--config", required=True)
    s.add_argument("--seed", type=int)
    s.set_defaults(func=cmd_run_experiment)

    s = sub.add_parser("serve", help="HTTP inference endpoint")
    s.add_argument("--model", required=True)
    s.add_argument("--addr", default="127.0.0.1:8000")
    s.set_defaults(func=cmd_serve)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        args.func(args)
    except KeyboardInterrupt:
        return 130
    except Exception as exc:
        msg = " ".join(str(exc).split()) or type(exc).__name__
        print(f"error: {msg}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
