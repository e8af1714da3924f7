import numpy as np
import pytest

from stereo_cnn.neuralnet import Architecture

ACCEPTANCE_LINES = []


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_arch():
    # 5x5 patches, 4 kernels, 8-wide layers
    return Architecture(patch_size=5, conv_size=3, n_kernels=4, feat_width=8, fc_width=8, fc_layers=4)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
