"""Desk-scale self-training experiment on synthetic multi-domain data.

Small dimensions and short per-phase budgets keep one seed near a minute and
a half on a single CPU core.
"""

from __future__ import annotations

from pathlib import Path

from .experiment import ExperimentConfig, run_experiment
from .synth import SynthSpec, synth_gen

DESK_SYNTH = dict(n_domains=3, synonym_rate=0.5, labeled_size=2000, unlabeled_size=20000, test_size=1000)
DESK_MODEL = dict(embed_dim=16, hidden=16, max_len=16, embed_dropout_style="timestep")
DESK_TRAIN = dict(learning_rate=3e-3, batch_size=64, max_epochs=3, patience=1)


def desk_config(data_dir: Path, out_dir: Path, manifest: dict, seed: int, **overrides) -> ExperimentConfig:
    teacher_domain = manifest["teacher_domain"]
    evals = [
        {"name": f"DOMAIN-{name.upper()}", "path": str(data_dir / fname)}
        for name, fname in sorted(manifest["tests"].items())
        if name != teacher_domain
    ]
    data = {
        "teacher_train": str(data_dir / manifest["teacher_train"]),
        "unlabeled": str(data_dir / manifest["unlabeled"]),
        "teacher_test": str(data_dir / manifest["tests"][teacher_domain]),
        "eval_datasets": evals,
        "output_dir": str(out_dir),
        "model": dict(DESK_MODEL),
        "train": dict(DESK_TRAIN),
        "seed": seed,
    }
    data.update(overrides)
    return ExperimentConfig.from_dict(data)


def run_desk_seed(seed: int, workdir: str | Path, synth: dict | None = None, **overrides) -> dict:
    """Generate data for ``seed``, run the full pipeline and return the report."""
    workdir = Path(workdir)
    spec = SynthSpec(**{**DESK_SYNTH, **(synth or {}), "seed": seed})
    data_dir = workdir / f"data-{seed}"
    manifest = synth_gen(spec, data_dir)
    config = desk_config(data_dir, workdir / f"run-{seed}", manifest, seed, **overrides)
    return run_experiment(config)
