import pytest
import torch

torch.set_num_threads(1)

from patchtrap import (
    Layout,
    SyntheticSpec,
    TriggerSpec,
    make_synthetic_dataset,
    train_baseline,
)

# Verdict lines registered by the acceptance tests; echoed after the run so
# they are visible even when every test passes under output capture.
ACCEPTANCE_VERDICTS: list[str] = []


@pytest.fixture(scope="session")
def acceptance_verdicts():
    return ACCEPTANCE_VERDICTS


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE_VERDICTS:
        terminalreporter.section("acceptance verdicts")
        for line in ACCEPTANCE_VERDICTS:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def tiny_data():
    """Small but learnable split shared by the fast tests."""
    return make_synthetic_dataset(SyntheticSpec(n_train=400, n_test=200, seed=101))


@pytest.fixture(scope="session")
def tiny_model(tiny_data):
    train, test = tiny_data
    return train_baseline(train, test, epochs=4, seed=7)


@pytest.fixture(scope="session")
def layout32():
    return Layout(frame_height=32, frame_width=32, patch_width=7)


@pytest.fixture(scope="session")
def square_trigger():
    return TriggerSpec(kind="square", width=3)
