import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from stub_server import StubEndpoint  # noqa: E402


@pytest.fixture
def stub():
    """Factory for stub endpoints, all closed at teardown."""
    made = []

    def make(task, infer=None, **kw):
        s = StubEndpoint(task, infer, **kw)
        made.append(s)
        return s

    yield make
    for s in made:
        try:
            s.close()
        except OSError:
            pass


# ---- acceptance reporting: one PASS/FAIL line per criterion

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def criterion():
    """``with criterion(n, title):`` records PASS or FAIL for acceptance criterion n."""

    class _Recorder:
        def __call__(self, number, title):
            self.number, self.title = number, title
            return self

        def __enter__(self):
            return self

        def __exit__(self, exc_type, exc, tb):
            status = "PASS" if exc_type is None else "FAIL"
            line = f"criterion {self.number}: {status}  {self.title}"
            if exc is not None:
                line += f"  ({type(exc).__name__}: {str(exc).splitlines()[0] if str(exc) else ''})"
            ACCEPTANCE_LINES.append(line)
            print(line)
            return False

    return _Recorder()


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
