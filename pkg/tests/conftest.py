import sys
from pathlib import Path

import numpy as np
import pytest

from zsdet.synthgen import SynthConfig, generate
from zsdet.train import TrainConfig, train_heads

sys.path.insert(0, str(Path(__file__).parent))


@pytest.fixture(scope="session")
def small_synth():
    """A quick dataset: 40 images, the default geometry."""
    return generate(SynthConfig(seed=3, images=40))


@pytest.fixture(scope="session")
def small_heads(small_synth):
    ds = small_synth
    return train_heads(ds.proposals_train, ds.gt_train, ds.embeddings, ds.split,
                       TrainConfig(iterations=400, seed=3))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for key in sorted(RESULTS):
            terminalreporter.write_line(RESULTS[key])
