"""Collects acceptance verdicts and prints them after the run."""

VERDICTS: dict[int, tuple[str, str]] = {}


def record(number: int, ok: bool, detail: str = "") -> None:
    VERDICTS[number] = ("PASS" if ok else "FAIL", detail)


def pytest_terminal_summary(terminalreporter):
    if not VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(VERDICTS):
        status, detail = VERDICTS[n]
        terminalreporter.write_line(f"criterion {n}: {status}  {detail}".rstrip())
