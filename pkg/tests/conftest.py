import numpy as np
import pytest
import torch


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_convex_quad(rng, jitter=0.2):
    """Corners TL, TR, BR, BL perturbed from the unit square; convex by construction."""
    base = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])
    while True:
        q = base + rng.uniform(-jitter, jitter, size=(4, 2))
        e = np.roll(q, -1, axis=0) - q
        n = np.roll(e, -1, axis=0)
        if np.all(e[:, 0] * n[:, 1] - e[:, 1] * n[:, 0] > 1e-3):
            return torch.tensor(q, dtype=torch.float64)


# --- acceptance reporting: one line per criterion in the terminal summary ---------

_CRITERIA = []


def pytest_runtest_logreport(report):
    if "test_acceptance.py::test_criterion_" not in report.nodeid:
        return
    if report.when == "call" or (report.when == "setup" and report.failed):
        detail = dict(report.user_properties).get("detail", "")
        if report.failed and not detail:
            detail = report.longrepr.reprcrash.message if hasattr(report.longrepr, "reprcrash") else "error"
        name = report.nodeid.split("::")[-1]
        _CRITERIA.append((name, "PASS" if report.passed else "FAIL", detail))


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for name, verdict, detail in sorted(_CRITERIA, key=lambda r: int(r[0].split("_")[2])):
        terminalreporter.write_line(f"{verdict}  {name}: {detail}")
