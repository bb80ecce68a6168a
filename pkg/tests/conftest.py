import os
import sys

sys.path.insert(0, os.path.dirname(__file__))


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, detail, table in results:
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}")
        for line in table:
            terminalreporter.write_line("    " + line)
    passed = sum(r[1] for r in results)
    terminalreporter.write_line(f"{passed}/{len(results)} criteria passed")
