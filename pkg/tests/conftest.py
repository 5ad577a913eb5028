"""Collects the acceptance verdict lines and prints them after the run."""

VERDICTS: list[str] = []


def record(number: int, title: str, ok: bool, detail: str) -> None:
    line = f"CRITERION {number:2d} {'PASS' if ok else 'FAIL'}  {title}: {detail}"
    VERDICTS.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(VERDICTS):
            terminalreporter.write_line(line)
