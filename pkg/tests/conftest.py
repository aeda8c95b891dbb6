import pytest

_ACCEPTANCE = {}


@pytest.fixture
def criterion(request):
    """Record ``(passed, detail)`` for an acceptance criterion; printed in the terminal summary."""
    name = request.node.name.split("_")[1].upper()

    def record(passed, detail):
        _ACCEPTANCE[name] = (bool(passed), detail)
        return passed

    yield record
    if name not in _ACCEPTANCE:
        _ACCEPTANCE[name] = (False, "no result recorded (test raised)")


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(_ACCEPTANCE, key=lambda k: int(k[1:])):
        ok, detail = _ACCEPTANCE[name]
        terminalreporter.write_line(f"{name}: {'PASS' if ok else 'FAIL'}  {detail}")
