import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, max_examples=60, suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("thorough", deadline=None, max_examples=500, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def tiny_pairs():
    from deceptlens.data import make_synthetic_pairs

    return make_synthetic_pairs(60, seed=3)


def tiny_config(arch="coatt", **kw):
    from deceptlens.models import ModelConfig

    base = dict(architecture=arch, d=8, heads=2, encoder_layers=1, base_layers=1, head_widths=(6, 5, 4),
                vocab_size=30, max_len_q1=6, max_len_q2=5)
    if arch == "coatt_liwc":
        base["lexicon_dim"] = 3
    base.update(kw)
    return ModelConfig(**base)


# acceptance criteria: one summary line each, printed after the run
_CRITERIA = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion check")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    if rep.when == "call" or rep.outcome != "passed":
        n, title = mark.args
        _CRITERIA[n] = (title, {"passed": "PASS", "failed": "FAIL", "skipped": "SKIP"}[rep.outcome])


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        title, status = _CRITERIA[n]
        terminalreporter.write_line(f"criterion {n}: {status}  {title}")
