import logging

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from revhelp.latent_model import HyperParams, init
from revhelp.synthgen import SynthConfig, generate

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(autouse=True)
def _quiet_timeliness():
    # test reviews may predate an item's first training review; the warning is expected
    logging.getLogger("revhelp.features").setLevel(logging.ERROR)
    yield
    logging.getLogger("revhelp.features").setLevel(logging.NOTSET)


@pytest.fixture(scope="session")
def small_corpus():
    return generate(SynthConfig(n_users=30, reviews_per_user=10, doc_length=20, test_per_user=2, seed=3))


@pytest.fixture
def small_state(small_corpus):
    return init(HyperParams(E=2, Z=3, seed=0), small_corpus.split)


def user_trajectories(train, levels):
    out = {}
    for d, lvl in zip(train, levels):
        out.setdefault(d.user_key, []).append(int(lvl))
    return out


def assert_monotone(train, levels):
    for traj in user_trajectories(train, levels).values():
        steps = np.diff([0] + traj)
        assert set(steps.tolist()) <= {0, 1}, traj


CRITERIA: list[str] = []


def record_criterion(number: int, title: str, ok: bool, detail: str = "") -> None:
    line = f"criterion {number:>2} {'PASS' if ok else 'FAIL'}: {title}" + (f" ({detail})" if detail else "")
    CRITERIA.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if CRITERIA:
        terminalreporter.section("acceptance criteria")
        for line in sorted(CRITERIA, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
