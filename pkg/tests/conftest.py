import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def rel(a, b):
    a, b = np.asarray(a), np.asarray(b)
    return float(np.max(np.abs(a - b) / np.maximum(np.abs(b), 1e-300)))


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance")
    table = getattr(mod, "ACCEPTANCE", None)
    if not table:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(table, key=lambda k: (int(k.rstrip("abc")), k)):
        ok, detail = table[key]
        terminalreporter.write_line("criterion %-3s %s  %s" % (key, "PASS" if ok else "FAIL", detail))
