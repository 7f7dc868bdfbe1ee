import pytest

from trmsm.data import generate_synthetic
from trmsm.model import ModelConfig

ACCEPTANCE_LINES: list[str] = []


def tiny_config(**overrides) -> ModelConfig:
    base = dict(num_classes=4, vocab_hash_buckets=64, d_w=8, d_u=8, heads=2, layers=2, dropout=0.1)
    base.update(overrides)
    return ModelConfig(**base)


@pytest.fixture
def tiny_split():
    return generate_synthetic((6, 2, 2), 3, 5, 4, "same-speaker-previous", seed=3)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
