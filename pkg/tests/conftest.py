import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from v2xnoise.synthetic import make_scenario  # noqa: E402


@pytest.fixture(scope="session")
def small_scenario(tmp_path_factory):
    """3 agents x 6 frames; read-only, shared across tests."""
    root = tmp_path_factory.mktemp("scenario")
    return make_scenario(root, n_frames=6, n_points=300)


_ACCEPTANCE = pytest.StashKey[list]()


@pytest.fixture
def criterion(request):
    """Record and print one PASS/FAIL line for an acceptance criterion."""
    lines = request.config.stash.setdefault(_ACCEPTANCE, [])

    def report(number, text, ok, elapsed, limit):
        line = f"{'PASS' if ok else 'FAIL'} criterion {number}: {text} ({elapsed:.3f} s, limit {limit} s)"
        lines.append(line)
        print(line)
        return ok

    return report


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split("criterion ")[1].split(":")[0])):
            terminalreporter.write_line(line)
