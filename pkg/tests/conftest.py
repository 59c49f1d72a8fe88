"""Shared fixtures and the acceptance summary printed at the end of a run."""

import numpy as np
import pytest

from sparse_alignment.core import AgentCloud, CuckerSmaleKernel

_ACCEPTANCE = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("acceptance")
    if mark is None:
        return
    number, title = mark.args
    if rep.when == "call" or (rep.when == "setup" and rep.outcome != "passed"):
        parts = [v for k, v in item.user_properties if k == "detail"]
        if rep.failed and rep.longrepr is not None:
            msg = str(getattr(rep.longrepr, "reprcrash", None) and rep.longrepr.reprcrash.message or "")
            if msg:
                parts.append(msg.splitlines()[0])
        _ACCEPTANCE[number] = (title, rep.outcome, "; ".join(parts))


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for number in sorted(_ACCEPTANCE):
        title, outcome, detail = _ACCEPTANCE[number]
        status = {"passed": "PASS", "failed": "FAIL", "skipped": "SKIP"}.get(outcome, outcome.upper())
        line = f"[{status}] criterion {number:2d}: {title}"
        if detail:
            line += f"  ({detail[:240]})"
        tr.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def cs_kernel():
    return CuckerSmaleKernel(K=1.0, sigma=1.0, beta=1.0)


def random_cloud(rng, N=None, d=None, scale=1.0):
    N = N or int(rng.integers(2, 9))
    d = d or int(rng.integers(1, 4))
    return AgentCloud(scale * rng.normal(size=(N, d)), scale * rng.normal(size=(N, d)))


@pytest.fixture
def detail(request):
    """Attach a measured value to the acceptance summary line (and print it)."""

    def record(text: str) -> None:
        print(text)
        request.node.user_properties.append(("detail", text))

    return record
