import re
import sys
from pathlib import Path

from hypothesis import settings

# Make the sibling helper modules (oracle, provider_double) importable from
# every test file regardless of how pytest was invoked.
sys.path.insert(0, str(Path(__file__).parent))

settings.register_profile("suite", deadline=None)
settings.load_profile("suite")

_criterion_results = {}


def pytest_runtest_logreport(report):
    match = re.match(r"test_criterion_(\d+)_(\w+)", report.nodeid.rsplit("::", 1)[-1])
    if not match:
        return
    number, slug = int(match.group(1)), match.group(2)
    if report.when == "call":
        _criterion_results[(number, slug)] = report.outcome
    elif report.when == "setup" and report.outcome != "passed":
        _criterion_results[(number, slug)] = report.outcome


def pytest_terminal_summary(terminalreporter):
    if not _criterion_results:
        return
    terminalreporter.write_sep("-", "acceptance criteria")
    for (number, slug), outcome in sorted(_criterion_results.items()):
        verdict = "PASS" if outcome == "passed" else outcome.upper()
        terminalreporter.write_line(f"criterion {number} ({slug}): {verdict}")
