import warnings

# criterion number -> (title, passed, detail); filled by test_acceptance
ACCEPTANCE = {}


def record(number, title, passed, detail):
    ACCEPTANCE[number] = (title, bool(passed), detail)
    return bool(passed)


def pytest_configure(config):
    warnings.filterwarnings("ignore", category=DeprecationWarning, module="scipy")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        title, ok, detail = ACCEPTANCE[k]
        tr.write_line(f"[{'PASS' if ok else 'FAIL'}] {k}. {title}: {detail}")
