import numpy as np
import pytest

from mollibra.bench import load_seed_pool


@pytest.fixture(scope="session")
def seed_pool():
    return load_seed_pool()


@pytest.fixture(scope="session")
def corpus20(seed_pool):
    rng = np.random.default_rng(20)
    return [seed_pool[i] for i in rng.choice(len(seed_pool), 20, replace=False)]


_CRITERIA: list[tuple[int, str, str, str]] = []


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or report.when != "call":
        return
    number, title = mark.args
    detail = "; ".join(str(v) for k, v in item.user_properties if k == "detail")
    _CRITERIA.append((number, title, "PASS" if report.passed else "FAIL", detail))


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number, title, verdict, detail in sorted(_CRITERIA):
        terminalreporter.write_line(f"criterion {number:2d} {verdict}  {title}  [{detail}]")
