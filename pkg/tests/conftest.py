import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(__file__))

from convkb.data import KnowledgeBase, save_kb  # noqa: E402
from convkb.synthetic import compositional_kb  # noqa: E402


def write_split_files(directory, train="", valid="", test=""):
    os.makedirs(directory, exist_ok=True)
    for name, text in (("train", train), ("valid", valid), ("test", test)):
        with open(os.path.join(directory, f"{name}.txt"), "w", encoding="utf-8") as f:
            f.write(text)
    return str(directory)


@pytest.fixture
def toy_kb():
    # 5 entities, 2 relations
    ents = ["a", "b", "c", "d", "e"]
    train = [(0, 0, 1), (1, 0, 2), (2, 1, 3), (0, 1, 3), (3, 0, 4)]
    valid = [(1, 1, 4)]
    test = [(0, 0, 2), (2, 0, 3), (4, 1, 0)]
    return KnowledgeBase.from_triples(ents, ["r", "s"], train, valid, test)


@pytest.fixture
def toy_dir(tmp_path, toy_kb):
    save_kb(toy_kb, tmp_path / "toy")
    return str(tmp_path / "toy")


@pytest.fixture(scope="session")
def synthetic_dir(tmp_path_factory):
    path = tmp_path_factory.mktemp("synthetic")
    save_kb(compositional_kb(n_valid=30), path)
    return str(path)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# --- acceptance summary: one line per criterion, printed after the run ---

_ACCEPTANCE = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, name): acceptance criterion number and short name")


def pytest_runtest_logreport(report):
    marker = dict(report.user_properties).get("criterion")
    if marker is None:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        status = {"passed": "PASS", "failed": "FAIL", "skipped": "SKIP"}[report.outcome]
        _ACCEPTANCE[marker] = (status, dict(report.user_properties).get("detail", ""))


@pytest.fixture(autouse=True)
def _tag_criterion(request, record_property):
    mark = request.node.get_closest_marker("criterion")
    if mark is not None:
        record_property("criterion", mark.args)


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for (n, name), (status, detail) in sorted(_ACCEPTANCE.items()):
        terminalreporter.write_line(f"{status}  {n}. {name}" + (f"  [{detail}]" if detail else ""))
