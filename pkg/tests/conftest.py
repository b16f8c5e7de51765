import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))

import acceptlog  # noqa: E402


def _order(cid):
    head = cid.rstrip("abcdefghijklmnopqrstuvwxyz")
    return (int(head) if head.isdigit() else 99, cid)


def pytest_terminal_summary(terminalreporter):
    if not acceptlog.RESULTS:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for cid in sorted(acceptlog.RESULTS, key=_order):
        ok, text = acceptlog.RESULTS[cid]
        tr.write_line(f"criterion {cid:<3} {'PASS' if ok else 'FAIL'}  {text}")
    for note in acceptlog.NOTES:
        tr.write_line(f"note: {note}")
