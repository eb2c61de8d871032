import numpy as np
import pytest
import torch

from ltcamtrap.data_model import build_benchmark
from ltcamtrap.synthgen import SynthSpec, generate_dataset


@pytest.fixture(autouse=True)
def _torch_determinism():
    torch.manual_seed(0)
    yield


@pytest.fixture(scope="session")
def small_spec():
    return SynthSpec(num_classes=4, head_count=20, decay=0.2,
                     domain_ratio=(4.0, 0.25, 1.0, 2.0), seed=3)


@pytest.fixture(scope="session")
def small_dataset(tmp_path_factory, small_spec):
    """A 4-class generated dataset, split and balanced; (manifest, root)."""
    root = tmp_path_factory.mktemp("synth")
    raw = generate_dataset(small_spec, root)
    manifest = build_benchmark(raw, 0.6, seed=3)
    manifest.save(root / "manifest.json")
    return manifest, root


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# acceptance reporting -------------------------------------------------------

_CRITERIA = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or (report.when != "call" and report.passed):
        return
    number, title = mark.args
    if report.when == "call" or report.failed:
        status = "PASS" if report.passed else ("SKIP" if report.skipped else "FAIL")
        _CRITERIA[number] = (title, status, call.duration)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        title, status, seconds = _CRITERIA[number]
        terminalreporter.write_line(f"criterion {number} {status:<4} {title} ({seconds:.1f}s)")
