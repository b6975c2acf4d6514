import os

import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

LONG_FLAG = "NIMZERO_LONG_ACCEPTANCE"
CRITERIA = range(1, 12)

_criteria: dict[int, tuple[bool, str]] = {}


def record_criterion(number: int, passed: bool, detail: str):
    """Keep the worst result per criterion for the end-of-run summary."""
    prev = _criteria.get(number)
    if prev is not None and not prev[0]:
        return
    if prev is not None and passed:
        detail = prev[1] + "; " + detail
    _criteria[number] = (passed, detail)


@pytest.fixture
def criterion():
    return record_criterion


def long_enabled() -> bool:
    return os.environ.get(LONG_FLAG, "").strip().lower() in {"1", "true", "yes"}


def pytest_collection_modifyitems(config, items):
    if long_enabled():
        return
    skip = pytest.mark.skip(reason=f"long run; set {LONG_FLAG}=1")
    for item in items:
        if "long" in item.keywords:
            item.add_marker(skip)


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for number in CRITERIA:
        if number not in _criteria:
            why = "not selected" if long_enabled() else f"long run; set {LONG_FLAG}=1"
            terminalreporter.write_line(f"criterion {number:2d}: SKIP  {why}")
            continue
        passed, detail = _criteria[number]
        terminalreporter.write_line(f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}")
