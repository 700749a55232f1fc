import pytest

# (criterion number, title, passed, detail) recorded by tests/test_acceptance.py
ACCEPTANCE = []


def record(number, title, passed, detail=""):
    ACCEPTANCE.append((number, title, bool(passed), detail))
    return passed


@pytest.fixture
def criterion():
    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number, title, passed, detail in sorted(ACCEPTANCE, key=lambda r: r[0]):
        line = f"criterion {number}: {'PASS' if passed else 'FAIL'}  {title}"
        terminalreporter.write_line(line + (f"  ({detail})" if detail else ""))
