from __future__ import annotations

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from lrdsest.procgen import ErrorLawSpec, ModelSpec, RegressorLawSpec

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def make_model(sigma0=0.5, alpha=0.4, thetas=(0.4,), beta1=(0.0,), beta2=(2.0,), pi0=0.5, **kw) -> ModelSpec:
    return ModelSpec(beta1=beta1, beta2=beta2, pi0=pi0,
                     error_law=ErrorLawSpec(alpha=alpha, sigma0=sigma0),
                     regressor_law=RegressorLawSpec(thetas=thetas, **kw))


@pytest.fixture
def acceptance_model() -> ModelSpec:
    return make_model()


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(12345)


# one PASS/FAIL line per acceptance criterion, printed after the run
ACCEPTANCE_LINES: dict[int, str] = {}


@pytest.fixture
def verdict():
    def record(number: int, ok: bool, detail: str) -> bool:
        ACCEPTANCE_LINES[number] = f"{'PASS' if ok else 'FAIL'} criterion {number:>2}: {detail}"
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for number in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[number])
