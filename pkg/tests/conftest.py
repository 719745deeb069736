import sys
from pathlib import Path

from hypothesis import HealthCheck, settings

sys.path.insert(0, str(Path(__file__).parent))

settings.register_profile(
    "qplab",
    derandomize=True,
    deadline=None,
    max_examples=50,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("qplab")

_ACCEPTANCE = []


def record_acceptance(tag: str, ok: bool, detail: str) -> str:
    """Store and return the one-line verdict of an acceptance criterion."""
    line = f"{tag} {'PASS' if ok else 'FAIL'} {detail}"
    _ACCEPTANCE.append(line)
    print(line)
    return line


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE):
            terminalreporter.write_line(line)
