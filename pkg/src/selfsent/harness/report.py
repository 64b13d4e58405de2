"""Table rendering for model comparisons (Markdown and a JSON twin)."""

from __future__ import annotations

import json
from collections.abc import Sequence

from ..selftrain import ComparisonRow

# model key -> column header
COLUMNS = {
    "teacher": "Teacher",
    "teacher_finetuned": "Teacher Finetuning",
    "noisy_student": "Independent Noisy Student",
}


def percent(acc: float) -> str:
    return f"{100.0 * acc:.2f}%"


def render_markdown(rows: Sequence[ComparisonRow], models: Sequence[str] | None = None) -> str:
    models = list(models) if models is not None else _model_keys(rows)
    headers = ["Dataset Name"] + [COLUMNS.get(m, m) for m in models]
    lines = ["| " + " | ".join(headers) + " |", "|" + "|".join("---" for _ in headers) + "|"]
    for row in rows:
        cells = [row.dataset] + [percent(row.accuracies[m]) for m in models]
        lines.append("| " + " | ".join(cells) + " |")
    return "\n".join(lines) + "\n"


def report_dict(rows: Sequence[ComparisonRow], models: Sequence[str] | None = None, **extra) -> dict:
    models = list(models) if models is not None else _model_keys(rows)
    return {
        "columns": [{"key": m, "header": COLUMNS.get(m, m)} for m in models],
        "rows": [{"dataset": r.dataset, "accuracy": {m: r.accuracies[m] for m in models}} for r in rows],
        **extra,
    }


def render_json(rows: Sequence[ComparisonRow], models: Sequence[str] | None = None, **extra) -> str:
    return json.dumps(report_dict(rows, models, **extra), indent=2, sort_keys=True) + "\n"


def rows_from_dict(data: dict) -> list[ComparisonRow]:
    return [ComparisonRow(r["dataset"], dict(r["accuracy"])) for r in data["rows"]]


def parse_markdown(text: str) -> tuple[list[str], list[tuple[str, list[str]]]]:
    """Inverse of :func:`render_markdown`: headers and (dataset, cells) rows."""
    lines = [ln for ln in text.strip().splitlines() if ln.startswith("|")]
    split = lambda ln: [c.strip() for c in ln.strip().strip("|").split("|")]
    headers = split(lines[0])
    return headers, [(cells[0], cells[1:]) for cells in map(split, lines[2:])]


def _model_keys(rows: Sequence[ComparisonRow]) -> list[str]:
    if not rows:
        return []
    keys = list(rows[0].accuracies)
    ordered = [k for k in COLUMNS if k in keys]
    return ordered + [k for k in keys if k not in COLUMNS]
