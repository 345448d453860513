import re

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from bicat.encoder import EncoderConfig, ModelParams

settings.register_profile("default", max_examples=50, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


TOY_CONFIG = EncoderConfig(n=8, d=8, heads=2, layers=1, dropout=0.0)
TOY_ITEMS = 6


@pytest.fixture
def toy_params():
    """|V|=6, n=8, d=8, h=2, L=1 encoder with non-trivial layer-norm parameters."""
    params = ModelParams.init(TOY_CONFIG, TOY_ITEMS, seed=3)
    rng = np.random.default_rng(12)
    for name, p in params.tensors.items():
        if "ln" in name or name.endswith(("b1", "b2")):
            p.data += rng.normal(scale=0.1, size=p.data.shape)
    return params


@pytest.fixture
def toy_sequences():
    return [[1, 2, 3, 4], [2, 5, 6], [3, 1, 4, 2, 6], [5, 6]]


_ACCEPTANCE = []


@pytest.fixture(scope="session")
def acceptance_log():
    """Collects one PASS/FAIL line per acceptance criterion for the terminal summary."""
    return _ACCEPTANCE


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.write_sep("=", "acceptance criteria")
        def order(line):
            m = re.match(r"criterion (\d+)", line)
            return (int(m.group(1)) if m else 99, line)

        for line in sorted(_ACCEPTANCE, key=order):
            terminalreporter.write_line(line)
