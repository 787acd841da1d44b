import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from scoredrift.data import Dataset

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


_CRITERIA = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long-running harness test")
    config.addinivalue_line("markers", "criterion(code, title): acceptance criterion covered by a test")


def pytest_collection_modifyitems(items):
    for item in items:
        mark = item.get_closest_marker("criterion")
        if mark is not None:
            code, title = mark.args
            _CRITERIA.setdefault(code, {"title": title, "ok": True, "ran": False, "nodes": set(),
                                        "notes": []})
            _CRITERIA[code]["nodes"].add(item.nodeid)


def pytest_runtest_logreport(report):
    for entry in _CRITERIA.values():
        if report.nodeid in entry["nodes"]:
            if report.when == "call":
                entry["ran"] = True
            if report.failed or report.skipped:
                entry["ok"] = False


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for code in sorted(_CRITERIA, key=lambda c: int(c[1:])):
        entry = _CRITERIA[code]
        verdict = "PASS" if entry["ok"] and entry["ran"] else "FAIL"
        notes = f"  [{'; '.join(entry['notes'])}]" if entry["notes"] else ""
        terminalreporter.write_line(f"{code:<4} {verdict}  {entry['title']}{notes}")


@pytest.fixture
def note(request):
    """Attach a measured value to the summary line of the test's criterion."""
    mark = request.node.get_closest_marker("criterion")

    def add(text):
        if mark is not None and mark.args[0] in _CRITERIA:
            _CRITERIA[mark.args[0]]["notes"].append(text)
    return add


def make_data(family, n, p, theta, seed, noise_sd=1.0):
    """Draw a dataset from a GLM with intercept-first ``theta``."""
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, p))
    eta = theta[0] + X @ np.asarray(theta[1:])
    if family == "logistic":
        y = (rng.random(n) < 1 / (1 + np.exp(-eta))).astype(float)
    elif family == "poisson":
        y = rng.poisson(np.exp(eta)).astype(float)
    else:
        y = eta + noise_sd * rng.standard_normal(n)
    return Dataset.from_arrays(X, y)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
