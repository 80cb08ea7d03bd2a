import random

import pytest
from hypothesis import HealthCheck, settings

from termsearch.dataset import generate_dataset
from termsearch.exprlang import Expression
from termsearch.mcs import uniform_playout

settings.register_profile("default", max_examples=100, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def random_terms(n, seed=0, max_len=12):
    rng = random.Random(seed)
    return [uniform_playout(Expression.empty(max_len), rng) for _ in range(n)]


@pytest.fixture(scope="session")
def small_dataset():
    """Curriculum-labelled dataset small enough for unit tests."""
    return generate_dataset(40, label_budget=128, label_mode="sh", seed=3)


def pytest_terminal_summary(terminalreporter):
    """One pass/fail line per acceptance criterion."""
    lines = []
    for outcome in ("passed", "failed"):
        for rep in terminalreporter.stats.get(outcome, []):
            if rep.when != "call":
                continue
            props = dict(rep.user_properties)
            if "criterion" in props:
                lines.append((props["criterion"], "PASS" if rep.passed else "FAIL", props.get("detail", "")))
    if lines:
        terminalreporter.section("acceptance criteria")
        for number, verdict, detail in sorted(lines):
            terminalreporter.write_line(f"criterion {number:>2}: {verdict}  {detail}")
