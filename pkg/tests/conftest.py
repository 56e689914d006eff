import pytest

# criterion number -> (passed, summary line); filled by test_acceptance.py
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


@pytest.fixture
def acceptance_record():
    def record(number: int, passed: bool, line: str) -> None:
        ACCEPTANCE[number] = (passed, line)
        print(f"criterion {number}: {'PASS' if passed else 'FAIL'} {line}")

    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        passed, line = ACCEPTANCE[number]
        terminalreporter.write_line(f"criterion {number}: {'PASS' if passed else 'FAIL'}  {line}")
