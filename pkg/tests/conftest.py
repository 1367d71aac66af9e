import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from hopc.litho import LithoContext, OpticsConfig  # noqa: E402


@pytest.fixture(scope="session")
def coarse_ctx():
    # 40 nm pixels: 15x15 kernels, small enough for 16x16 instances
    return LithoContext.build(OpticsConfig(pitch=40.0))


@pytest.fixture(scope="session")
def ctx8():
    return LithoContext.build(OpticsConfig(pitch=8.0))


@pytest.fixture
def verdict(request):
    """Record one acceptance line; the lines are repeated in the terminal summary."""
    lines = request.config.__dict__.setdefault("_acceptance_lines", [])

    def record(number: int, title: str, ok: bool, detail: str) -> bool:
        line = f"[{'PASS' if ok else 'FAIL'}] {number:2d}. {title}: {detail}"
        print(line)
        lines.append((number, line))
        return ok
    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = getattr(config, "_acceptance_lines", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)
