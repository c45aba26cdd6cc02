import pytest

# criterion id -> list of (part ok, detail); filled by the acceptance suite
_ACCEPTANCE = {}


@pytest.fixture(scope="session")
def acceptance(request):
    """record(criterion, ok, detail): print one line now and keep it for the summary."""
    capman = request.config.pluginmanager.getplugin("capturemanager")

    def record(criterion, ok, detail):
        _ACCEPTANCE.setdefault(criterion, []).append((bool(ok), detail))
        line = f"ACCEPTANCE {criterion}: {'PASS' if ok else 'FAIL'} {detail}"
        if capman is not None:
            with capman.global_and_fixture_disabled():
                print("\n" + line, flush=True)
        else:
            print(line, flush=True)

    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for criterion in sorted(_ACCEPTANCE, key=lambda c: int(c)):
        parts = _ACCEPTANCE[criterion]
        ok = all(p for p, _ in parts)
        detail = "; ".join(d for _, d in parts)
        terminalreporter.write_line(f"criterion {criterion}: {'PASS' if ok else 'FAIL'}  {detail}")
