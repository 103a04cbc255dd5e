import pytest

# criterion number -> (passed, detail), filled in by the acceptance tests
VERDICTS: dict[int, tuple[bool, str]] = {}
# criterion number -> test outcome, for criteria whose test never reached a verdict
OUTCOMES: dict[int, str] = {}


@pytest.fixture
def verdict():
    def record(number: int, passed: bool, detail: str) -> bool:
        VERDICTS[number] = (bool(passed), detail)
        return bool(passed)

    return record


def pytest_runtest_logreport(report):
    if report.when != "call" and not report.failed:
        return
    name = report.nodeid.rsplit("::", 1)[-1]
    if name.startswith("test_criterion_"):
        number = int(name[len("test_criterion_"):].split("_")[0])
        OUTCOMES[number] = report.outcome


def pytest_terminal_summary(terminalreporter):
    numbers = sorted(set(VERDICTS) | set(OUTCOMES))
    if not numbers:
        return
    terminalreporter.section("acceptance criteria")
    for n in numbers:
        if n in VERDICTS:
            ok, detail = VERDICTS[n]
            terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
        else:
            terminalreporter.write_line(f"criterion {n:2d}: FAIL  (no verdict, test {OUTCOMES[n]})")
