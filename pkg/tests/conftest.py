import warnings

import numpy as np
import pytest
import torch

from mesa.backbone import load_backbone


@pytest.fixture(scope="session")
def backbone():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return load_backbone(seed=0)


@pytest.fixture(scope="session")
def backbone64():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return load_backbone(seed=0, dtype=torch.float64)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_image(rng, h, w):
    return rng.uniform(size=(h, w, 3))


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
