import numpy as np
import pytest

from glunilm.network import NetworkConfig

REDUCED = NetworkConfig(l_in=64, l_out=8, n_glu_stages=3, conv_channels=8, kernel_size=4,
                        n_res_blocks=1, res_hidden=16)


def numeric_grad(f, x, h=1e-5):
    """Central-difference gradient of scalar ``f`` with respect to every element of ``x``.

    ``x`` is perturbed in place and restored.
    """
    grad = np.zeros_like(x)
    flat, gflat = x.reshape(-1), grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        plus = f()
        flat[i] = orig - h
        minus = f()
        flat[i] = orig
        gflat[i] = (plus - minus) / (2 * h)
    return grad


def max_rel_error(a, b):
    a, b = np.ravel(a), np.ravel(b)
    denom = np.maximum(np.abs(a), np.abs(b))
    mask = denom > 1e-12
    if not mask.any():
        return 0.0
    return float(np.max(np.abs(a - b)[mask] / denom[mask]))


@pytest.fixture
def rng():
    return np.random.default_rng(20180715)


@pytest.fixture
def reduced_config():
    return REDUCED


_acceptance_results = []


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker and (report.when == "call" or (report.when == "setup" and report.outcome != "passed")):
        detail = dict(item.user_properties).get("detail", "")
        _acceptance_results.append((marker.args[0], item.name, report.outcome, detail))


def pytest_terminal_summary(terminalreporter):
    if not _acceptance_results:
        return
    terminalreporter.section("acceptance criteria")
    for number, name, outcome, detail in sorted(_acceptance_results):
        status = "PASS" if outcome == "passed" else outcome.upper()
        suffix = f" ({detail})" if detail else ""
        terminalreporter.write_line(f"[{status}] criterion {number}: {name}{suffix}")
