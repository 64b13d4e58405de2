import numpy as np
import pytest

from selfsent.model import ModelConfig, init_params
from selfsent.numcore import Rng

TINY = ModelConfig(vocab_size=20, embed_dim=8, hidden=6, max_len=5)


@pytest.fixture
def tiny_config():
    return TINY


@pytest.fixture
def tiny_params64():
    return init_params(TINY, Rng(0), np.float64)


@pytest.fixture
def tiny_batch():
    ids = np.array([[3, 5, 7, 0, 0], [4, 4, 9, 11, 13]])
    mask = (ids > 0).astype(np.int8)
    return ids, mask, np.array([0, 2])


def perturbed_params(config, seed, scale=1.0, dtype=np.float64):
    """Parameters drawn uniform(-scale, scale); keeps gradients away from the
    near-zero regime where central differences drown in rounding error."""
    rng = Rng(seed)
    params = init_params(config, rng, dtype)
    for arrs in params.values():
        for arr in arrs.values():
            arr[...] = rng.uniform(-scale, scale, arr.shape)
    return params


# Acceptance verdicts, printed once at the end of the session.
ACCEPTANCE: dict[int, str] = {}


def record(number: int, name: str, passed: bool, detail: str = "") -> bool:
    line = f"criterion {number:2d} [{'PASS' if passed else 'FAIL'}] {name}" + (f": {detail}" if detail else "")
    ACCEPTANCE[number] = line
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[n])
