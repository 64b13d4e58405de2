import json
import math

import numpy as np
import pytest

from selfsent.harness.report import parse_markdown, render_markdown
from selfsent.model import Classifier, ModelConfig, init_params, params_equal
from selfsent.numcore import ContractError, Rng
from selfsent.selftrain import (
    ComparisonRow,
    PseudoLabelRecord,
    StudentMode,
    assemble_student_dataset,
    compare_models,
    iter_corpus,
    pseudolabel_corpus,
    read_pseudolabels,
    train_student,
    write_pseudolabels,
)
from selfsent.textpipe import LabeledExample, Sentiment, build_vocab, tokenize
from selfsent.training import TrainConfig

WORDS = ["good", "bad", "fine", "great", "awful", "meh", "ok", "nice"]


def docs(n, seed=0):
    rng = np.random.default_rng(seed)
    return [(f"doc{i}", " ".join(rng.choice(WORDS, size=rng.integers(1, 6)))) for i in range(n)]


@pytest.fixture
def teacher():
    vocab = build_vocab([WORDS], min_freq=1)
    cfg = ModelConfig(vocab_size=vocab.size, embed_dim=6, hidden=4, max_len=6)
    params = init_params(cfg, Rng(1))
    params["output"]["W"] *= 40.0  # spread confidences
    return Classifier(cfg, params, vocab)


def constant_teacher(probs):
    vocab = build_vocab([WORDS], min_freq=1)
    cfg = ModelConfig(vocab_size=vocab.size, embed_dim=4, hidden=3, max_len=6)
    params = init_params(cfg, Rng(0))
    params["output"]["W"][:] = 0.0
    params["output"]["b"][:] = np.log(probs)
    return Classifier(cfg, params, vocab)


def labeled(n, seed=0):
    return [LabeledExample(t, Sentiment(i % 3)) for i, (_, t) in enumerate(docs(n, seed))]


def test_pseudolabels_match_predict(teacher):
    corpus = docs(40)
    records = list(pseudolabel_corpus(teacher, corpus, batch_size=7))
    assert [r.doc_id for r in records] == [d for d, _ in corpus]
    for rec in records:
        label, probs = teacher.predict(rec.text)
        assert rec.label is label
        assert rec.confidence == float(probs.max())


def test_pseudolabel_deterministic_and_batch_independent(teacher):
    corpus = docs(30)
    a = list(pseudolabel_corpus(teacher, corpus, batch_size=4))
    b = list(pseudolabel_corpus(teacher, corpus, batch_size=256))
    assert a == b == list(pseudolabel_corpus(teacher, corpus, batch_size=4))


def test_threshold_contract():
    t = constant_teacher([0.8, 0.1, 0.1])
    corpus = docs(5)
    assert list(pseudolabel_corpus(t, corpus, confidence_threshold=0.9)) == []
    kept = list(pseudolabel_corpus(t, corpus, confidence_threshold=0.75))
    assert len(kept) == 5 and all(r.label is Sentiment.NEGATIVE for r in kept)
    assert len(list(pseudolabel_corpus(t, corpus))) == 5


def test_threshold_monotone(teacher):
    corpus = docs(60, seed=3)
    counts = [len(list(pseudolabel_corpus(teacher, corpus, confidence_threshold=c)))
              for c in (0.34, 0.5, 0.7, 0.9, 0.99)]
    assert counts == sorted(counts, reverse=True)
    assert counts[0] == 60


def test_pseudolabel_io_round_trip(teacher, tmp_path):
    recs = list(pseudolabel_corpus(teacher, docs(10)))
    path = tmp_path / "p.jsonl"
    assert write_pseudolabels(path, recs) == 10
    assert read_pseudolabels(path) == recs
    first = json.loads(path.read_text().splitlines()[0])
    assert set(first) == {"id", "text", "label", "confidence"}


def test_iter_corpus_errors(tmp_path):
    with pytest.raises(OSError, match="document 0"):
        list(iter_corpus(tmp_path / "missing.jsonl"))
    p = tmp_path / "c.jsonl"
    p.write_text('{"id":"a","text":"x"}\n{"id":"b"}\n')
    with pytest.raises(ValueError, match="document 1"):
        list(iter_corpus(p))


def test_assemble_counts():
    pseudo = [PseudoLabelRecord(f"p{i}", f"text {i}", Sentiment(i % 3), 0.9) for i in range(20)]
    teacher_train = labeled(10, seed=9)
    m1 = assemble_student_dataset(StudentMode.TEACHER_FINETUNED, pseudo, teacher_train)
    m2 = assemble_student_dataset(StudentMode.INDEPENDENT_NOISY_STUDENT, pseudo, teacher_train, Rng(0))
    assert len(m1) == 20 and not set(m1) & set(teacher_train)
    assert len(m2) == 30
    assert sorted(map(repr, m2)) == sorted(map(repr, m1 + teacher_train))
    with pytest.raises(ContractError):
        assemble_student_dataset(StudentMode.TEACHER_FINETUNED, [], teacher_train)


def test_finetune_with_zero_epochs_is_teacher(teacher):
    pseudo = list(pseudolabel_corpus(teacher, docs(12)))
    res = train_student(StudentMode.TEACHER_FINETUNED, pseudo, labeled(6), teacher,
                        TrainConfig(max_epochs=0), Rng(0))
    assert params_equal(res.model.params, teacher.params)
    assert res.trace == []


def test_noisy_student_fresh_init_and_deterministic(teacher):
    pseudo = list(pseudolabel_corpus(teacher, docs(30)))
    tc = TrainConfig(max_epochs=1, batch_size=8)
    runs = [train_student(StudentMode.INDEPENDENT_NOISY_STUDENT, pseudo, labeled(12), teacher, tc, Rng(4))
            for _ in range(2)]
    assert params_equal(runs[0].model.params, runs[1].model.params)
    assert not params_equal(runs[0].model.params, teacher.params, ["embed"])
    assert runs[0].model.vocab == teacher.vocab


REFERENCE_TABLE = {
    "Sentiment-140": (0.6887, 0.6405, 0.7369),
    "TEACHER-TEST": (0.758, 0.757, 0.7446),
}


def test_compare_models_reproduces_table_layout():
    keys = ["teacher", "teacher_finetuned", "noisy_student"]
    models = [(k, k) for k in keys]
    datasets = [(name, [name]) for name in REFERENCE_TABLE]
    evaluate = lambda model, data: REFERENCE_TABLE[data[0]][keys.index(model)]
    rows = compare_models(models, datasets, evaluate)
    md = render_markdown(rows, keys)
    assert md == (
        "| Dataset Name | Teacher | Teacher Finetuning | Independent Noisy Student |\n"
        "|---|---|---|---|\n"
        "| Sentiment-140 | 68.87% | 64.05% | 73.69% |\n"
        "| TEACHER-TEST | 75.80% | 75.70% | 74.46% |\n"
    )
    headers, parsed = parse_markdown(md)
    assert headers[0] == "Dataset Name" and parsed[0] == ("Sentiment-140", ["68.87%", "64.05%", "73.69%"])


def test_compare_models_single_cell_and_order():
    rows = compare_models([("teacher", object())], [("A", [1]), ("B", [1])], lambda m, d: 0.5)
    assert rows == [ComparisonRow("A", {"teacher": 0.5}), ComparisonRow("B", {"teacher": 0.5})]
    assert render_markdown(rows[:1]).splitlines()[2] == "| A | 50.00% |"
    acc = {"A": 0.25, "B": 0.75}
    fwd = compare_models([("m", None)], [("A", ["A"]), ("B", ["B"])], lambda m, d: acc[d[0]])
    rev = compare_models([("m", None)], [("B", ["B"]), ("A", ["A"])], lambda m, d: acc[d[0]])
    assert {r.dataset: r.accuracies for r in fwd} == {r.dataset: r.accuracies for r in rev}
    with pytest.raises(ContractError):
        compare_models([("m", None)], [("E", [])], lambda m, d: 1.0)


def test_compare_models_real_evaluation(teacher):
    data = [LabeledExample(t, teacher.predict(t)[0]) for _, t in docs(9)]
    rows = compare_models([("teacher", teacher)], [("self", data)])
    assert rows[0].accuracies["teacher"] == 1.0
    assert math.isfinite(rows[0].accuracies["teacher"])
    assert all(isinstance(tokenize(e.text), list) for e in data)
