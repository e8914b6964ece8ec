import pytest

from greensentry.cli import run
from greensentry.simulate import build_reference_scenario


@pytest.fixture(scope="session")
def reference():
    return build_reference_scenario(7)


@pytest.fixture(scope="session")
def reproduce_dirs(tmp_path_factory):
    """Two independent ``reproduce --seed 7`` output directories."""
    dirs = []
    for name in ("first", "second"):
        out = tmp_path_factory.mktemp(name)
        assert run(["reproduce", "--seed", "7", "--out", str(out)]) == 0
        dirs.append(out)
    return dirs


ACCEPTANCE = {}


class _Criterion:
    def __init__(self, number, title):
        self.number, self.title, self.detail = number, title, ""

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        status = "PASS" if exc_type is None else "FAIL"
        detail = self.detail if exc_type is None else f"{self.detail} {exc_type.__name__}: {exc}".strip()
        ACCEPTANCE[self.number] = (status, self.title, detail.splitlines()[0] if detail else "")
        return False


@pytest.fixture
def criterion():
    return _Criterion


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        status, title, detail = ACCEPTANCE[number]
        terminalreporter.write_line(f"[{status}] {number}. {title}: {detail}")
