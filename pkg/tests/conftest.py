import sys
from pathlib import Path

import pytest
import torch

sys.path.insert(0, str(Path(__file__).parent))
torch.set_num_threads(1)

from ghostfree.dhan import DhanConfig  # noqa: E402
from ghostfree.features import ExtractorConfig  # noqa: E402


def tiny_extractor(arch="vgg19", divisor=8, seed=0):
    return ExtractorConfig(arch=arch, width_divisor=divisor, pretrained=False, seed=seed)


def tiny_config(variant="dhan", depth=2, width=4, **kw):
    kw.setdefault("extractor", tiny_extractor())
    return DhanConfig(depth=depth, base_channels=width, variant=variant, **kw)


@pytest.fixture
def rng():
    import numpy as np

    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
