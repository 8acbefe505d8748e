import numpy as np
import pytest

from bevkit._backend import compiled_kernels

BACKENDS = ["python"] + (["compiled"] if compiled_kernels is not None else [])


@pytest.fixture(params=BACKENDS)
def backend(request):
    return request.param


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_boxes(rng, n, spread=10.0, z_spread=1.0):
    return np.column_stack([
        rng.uniform(-spread, spread, n),
        rng.uniform(-spread, spread, n),
        rng.uniform(-z_spread, z_spread, n),
        rng.uniform(0.5, 5.0, n),
        rng.uniform(0.5, 3.0, n),
        rng.uniform(0.5, 2.5, n),
        rng.uniform(-np.pi, np.pi, n),
    ])


# -- acceptance reporting ----------------------------------------------------

_criteria = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): numbered acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or (rep.when != "call" and not rep.failed):
        return
    number, title = mark.args
    detail = dict(item.user_properties).get("detail", "")
    crash = getattr(rep.longrepr, "reprcrash", None)
    if rep.failed and crash is not None:
        reason = crash.message.splitlines()[0]
        detail = f"{detail}; {reason}" if detail else reason
    status = "PASS" if rep.passed else ("SKIP" if rep.skipped else "FAIL")
    _criteria[number] = (status, title, detail)
    if rep.when == "call":
        # visible with -s; the terminal summary repeats it in every mode
        print(f"\ncriterion {number:>2} {status}: {title} ({detail})")


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_criteria):
        status, title, detail = _criteria[number]
        terminalreporter.write_line(f"{number:>2} {status}  {title}" + (f"  [{detail}]" if detail else ""))
