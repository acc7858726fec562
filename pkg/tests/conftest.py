import sys
from dataclasses import dataclass, field
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

_CRITERIA = pytest.StashKey[dict]()


@dataclass
class CriterionPart:
    name: str
    ok: bool = False  # stays False if the test dies before deciding
    detail: str = ""
    expected_failure: bool = False


@dataclass
class Criterion:
    number: int
    title: str
    parts: list = field(default_factory=list)
    seconds: float = 0.0

    @property
    def ok(self):
        return bool(self.parts) and all(p.ok for p in self.parts)


def pytest_configure(config):
    config.stash[_CRITERIA] = {}


@pytest.fixture
def criterion(request):
    """criterion(n, title, part) -> CriterionPart to fill in; printed in the terminal summary."""
    table = request.config.stash[_CRITERIA]

    def make(number, title, part="", expected_failure=False):
        c = table.setdefault(number, Criterion(number, title))
        p = CriterionPart(part, expected_failure=expected_failure)
        c.parts.append(p)
        return c, p

    return make


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    table = config.stash.get(_CRITERIA, {})
    if not table:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(table):
        c = table[n]
        details = "; ".join(f"{p.name + ': ' if p.name else ''}{'ok' if p.ok else 'FAILED'}"
                            f"{' (known)' if p.expected_failure and not p.ok else ''}"
                            f"{' ' + p.detail if p.detail else ''}" for p in c.parts)
        terminalreporter.write_line(f"criterion {n} {'PASS' if c.ok else 'FAIL'} [{c.seconds:.2f}s] {c.title}: {details}")
