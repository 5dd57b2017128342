import time

import pytest

_VERDICTS = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance: end-to-end acceptance criteria (slow)")


class Criterion:
    """Collects named sub-checks of one acceptance criterion and records the verdict."""

    def __init__(self, number, title):
        self.number, self.title = number, title
        self.parts = []
        self.t0 = time.perf_counter()

    def check(self, name, ok, detail=""):
        self.parts.append((name, bool(ok), detail))

    def runtime(self, limit_seconds):
        dt = time.perf_counter() - self.t0
        self.check(f"runtime < {limit_seconds}s", dt < limit_seconds, f"{dt:.1f}s")

    def finish(self):
        ok = all(p[1] for p in self.parts)
        failed = [f"{n} ({d})" if d else n for n, good, d in self.parts if not good]
        line = f"criterion {self.number:2d} {self.title}: {'PASS' if ok else 'FAIL'}"
        if failed:
            line += " [failed: " + "; ".join(failed) + "]"
        _VERDICTS[self.number] = line
        print(line)
        for n, good, d in self.parts:
            print(f"    {'ok ' if good else 'BAD'} {n} {d}")
        assert ok, line


@pytest.fixture
def criterion():
    made = []

    def make(number, title):
        c = Criterion(number, title)
        made.append(c)
        return c

    return make


def pytest_terminal_summary(terminalreporter):
    if not _VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(_VERDICTS):
        terminalreporter.write_line(_VERDICTS[k])
