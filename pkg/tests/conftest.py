import sys
from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, str(Path(__file__).parent))

settings.register_profile("repo", deadline=None, max_examples=60, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("repo")

from gmn.gradcheck import micro_problem  # noqa: E402
from gmn.model import GMN  # noqa: E402
from gmn.params import GMNConfig  # noqa: E402
from gmn.synth import make_synthetic  # noqa: E402


@pytest.fixture(scope="session")
def small_data():
    return make_synthetic(120, 40, 80, 4, 0.8, seed=3)


@pytest.fixture
def small_model(small_data):
    cfg = GMNConfig(d=8, hidden=16, k1=2, k2=2, cap_v=6, cap_i=8, dropout=0.0, batch_size=32, lr=0.01,
                    samples_per_user=1, seed=1)
    return GMN(small_data.graph, cfg)


@pytest.fixture
def micro():
    return micro_problem()


def rng(seed=0):
    return np.random.default_rng(seed)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
