import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from pgkd.data import SbmConfig, generate_sbm  # noqa: E402
from pgkd.graph import make_split  # noqa: E402
from pgkd.training import TrainConfig  # noqa: E402

ACCEPTANCE_RESULTS: dict[int, tuple[str, str]] = {}


def pytest_runtest_logreport(report):
    if report.when != "call" and not (report.when == "setup" and report.outcome != "passed"):
        return
    marker = "test_acceptance.py::test_criterion_"
    if marker not in report.nodeid:
        return
    number = int(report.nodeid.split(marker)[1][:2])
    detail = ""
    if report.outcome != "passed" and report.longrepr is not None:
        lines = [ln for ln in str(report.longrepr).splitlines() if ln.startswith("E ")]
        detail = lines[0][1:].strip() if lines else ""
    ACCEPTANCE_RESULTS[number] = ("PASS" if report.outcome == "passed" else "FAIL", detail)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE_RESULTS):
        status, detail = ACCEPTANCE_RESULTS[number]
        line = f"criterion {number:2d}: {status}"
        terminalreporter.write_line(line + (f"  ({detail[:160]})" if detail else ""))


@pytest.fixture(scope="session")
def sbm_graph():
    return generate_sbm(SbmConfig(k=3, nodes_per_block=40, p_intra=0.15, p_inter=0.01, feature_dim=8,
                                  feature_center_separation=1.5, feature_noise_std=1.0, seed=3))


@pytest.fixture(scope="session")
def sbm_split(sbm_graph):
    return make_split(sbm_graph, "transductive", train_per_class=10, seed=0)


@pytest.fixture
def fast_cfg():
    return TrainConfig(teacher="gcn", teacher_hidden=16, student_hidden=16, max_epochs=40, patience=10)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
