import os
import sys

sys.path.insert(0, os.path.dirname(__file__))

from fsbgl import dcfit  # noqa: E402

# every fit_Q call made anywhere in the session, for the monotonicity audit
FIT_LOG = []
ACCEPTANCE = {}

_fit_Q = dcfit.fit_Q


def _recording_fit_Q(*args, **kwargs):
    Q, diag = _fit_Q(*args, **kwargs)
    FIT_LOG.append(diag)
    return Q, diag


dcfit.fit_Q = _recording_fit_Q


def record_acceptance(number, passed, detail):
    ACCEPTANCE[number] = (bool(passed), detail)


def pytest_collection_modifyitems(session, config, items):
    # acceptance tests last, so the monotonicity audit covers every fit
    items.sort(key=lambda item: item.module.__name__ == "test_acceptance")


def pytest_sessionfinish(session, exitstatus):
    if not FIT_LOG or 4 in ACCEPTANCE:
        return
    bad = [d for d in FIT_LOG if not d.is_monotone()]
    ACCEPTANCE.setdefault("4*", (not bad, f"session audit: {len(FIT_LOG) - len(bad)}/"
                                            f"{len(FIT_LOG)} fits monotone"))
    if bad and session.exitstatus == 0:
        session.exitstatus = 1


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE, key=str):
        ok, detail = ACCEPTANCE[key]
        terminalreporter.write_line(f"criterion {key}: {'PASS' if ok else 'FAIL'}  {detail}")
