import os

# every state the library builds on its unvalidated fast path is re-checked
# (Hermitian, unit trace, positive, no coherence on classical registers)
os.environ["QRAND_STRICT"] = "1"


def pytest_terminal_summary(terminalreporter):
    from qrand.core import strict_checks

    terminalreporter.write_line(f"strict mode: {strict_checks()} internally built states re-validated")
