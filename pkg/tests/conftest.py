import numpy as np
import pytest

from marmix.data import SimSpec, apply_mar_deletion, oracle_delta_sq, simulate
from marmix.links import AoParams


def masked_gaussian(seed=0, n=2000, rate=0.7, slope=-8.0, lam=0.5):
    spec = SimSpec(n=n, seed=seed)
    full = simulate(spec)
    return apply_mar_deletion(full, AoParams(0.0, slope, lam), target_rate=rate,
                              delta_sq=oracle_delta_sq(spec, full), seed=seed), spec


@pytest.fixture(scope="session")
def gaussian_mar():
    return masked_gaussian(seed=0)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# ---------------------------------------------------------------------------
# one line per acceptance criterion at the end of the run

_CRITERIA = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    number, title = marker.args
    detail = "; ".join(str(v) for k, v in item.user_properties if k == "detail")
    if report.when == "call" or (report.when == "setup" and not report.passed):
        status = "PASS" if report.passed else ("SKIP" if report.skipped else "FAIL")
        _CRITERIA[number] = (status, title, detail)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        status, title, detail = _CRITERIA[number]
        line = f"criterion {number:>2} {status}: {title}"
        terminalreporter.write_line(line + (f" [{detail}]" if detail else ""))
