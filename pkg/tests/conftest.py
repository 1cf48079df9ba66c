import os
import sys

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, os.path.dirname(__file__))

settings.register_profile(
    "default", max_examples=40, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture(scope="session")
def chair_sample():
    from tega.generation import ProceduralGenerator, synthesize_sample

    return synthesize_sample("chair", 3.0, 1, ProceduralGenerator(), num_points=1024)


@pytest.fixture(scope="session")
def small_samples():
    """Two samples per class for three classes, labelled."""
    from dataclasses import replace

    from tega.generation import ProceduralGenerator, synthesize_sample

    gen = ProceduralGenerator()
    out = []
    for label, name in enumerate(("chair", "lamp", "mug")):
        for seed in (11, 12):
            s = synthesize_sample(name, 30.0, seed + 100 * label, gen, num_points=512)
            out.append(replace(s, class_label=label))
    return out


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def acceptance(request):
    """``acceptance(n, ok, detail)`` records one criterion line for the run summary."""
    lines = request.config.stash.setdefault(ACCEPTANCE_KEY, {})

    def record(n: int, ok: bool, detail: str) -> bool:
        line = f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        lines[n] = line
        print(line)
        return ok

    return record


ACCEPTANCE_KEY = pytest.StashKey[dict]()


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(ACCEPTANCE_KEY, {})
    if lines:
        terminalreporter.section("acceptance criteria")
        for n in sorted(lines):
            terminalreporter.write_line(lines[n])
