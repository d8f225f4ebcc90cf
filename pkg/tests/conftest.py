import sys

import pytest

# criterion number -> (verdict, detail), filled by the acceptance tests
ACCEPTANCE = {}


@pytest.fixture
def record(request):
    def _record(num, ok, detail):
        line = f"ACCEPTANCE {num} {'PASS' if ok else 'FAIL'}: {detail}"
        ACCEPTANCE[num] = line
        sys.__stdout__.write("\n" + line + "\n")
        sys.__stdout__.flush()
        return ok

    return _record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(ACCEPTANCE, key=lambda s: (int(str(s).rstrip("abc")), str(s))):
        terminalreporter.write_line(ACCEPTANCE[num])
