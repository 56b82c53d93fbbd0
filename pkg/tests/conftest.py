import pytest

_acceptance = []


@pytest.fixture
def acceptance_line(request):
    """Write one summary line straight to the terminal, bypassing output capture."""
    tr = request.config.pluginmanager.getplugin("terminalreporter")

    def emit(line):
        _acceptance.append(line)
        if tr is not None:
            tr.write_line("")
            tr.write_line(line)
    return emit


def pytest_terminal_summary(terminalreporter):
    if _acceptance:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_acceptance, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
