"""Shared pytest plumbing: collects the acceptance one-liners and prints
them as a terminal section so the verdict survives output capture."""

acceptance_results = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not acceptance_results:
        return
    terminalreporter.section("acceptance criteria")
    for _, line in sorted(acceptance_results):
        terminalreporter.write_line(line)
