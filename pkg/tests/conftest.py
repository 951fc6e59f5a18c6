import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from pathkg.kg import Graph  # noqa: E402

TOY_TRAIN = [
    ("alice", "/people/sibling", "bob"),
    ("bob", "/people/born_in", "york"),
    ("alice", "/people/born_in", "york"),
    ("carol", "/people/sibling", "dave"),
    ("dave", "/people/born_in", "leeds"),
    ("york", "/location/in", "england"),
    ("leeds", "/location/in", "england"),
    ("bob", "/people/lives_in", "leeds"),
    ("erin", "/people/lives_in", "york"),
    ("erin", "/people/sibling", "carol"),
]
TOY_VALID = [("carol", "/people/lives_in", "leeds")]
TOY_TEST = [("carol", "/people/born_in", "leeds"), ("erin", "/people/born_in", "york")]

TOY_TYPES = {
    "alice": ["/people/person", "/people/sibling_holder"],
    "bob": ["/people/person", "/music/artist"],
    "carol": ["/people/person"],
    "dave": ["/music/artist"],
    "york": ["/location/city", "/location/place"],
    "leeds": ["/location/city"],
    "england": ["/location/country"],
}


@pytest.fixture
def toy_graph() -> Graph:
    return Graph.from_names(TOY_TRAIN, TOY_VALID, TOY_TEST)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def write_triples(path, rows, order="HRT"):
    with open(path, "w", encoding="utf-8") as f:
        for h, r, t in rows:
            f.write("\t".join((h, t, r) if order == "HTR" else (h, r, t)) + "\n")
    return path


# -- acceptance summary --------------------------------------------------------

_ACCEPTANCE: list[tuple[str, str]] = []


def pytest_runtest_logreport(report):
    if "test_acceptance.py" not in report.nodeid:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        name = report.nodeid.split("::")[-1].removeprefix("test_")
        _ACCEPTANCE.append((name, "PASS" if report.outcome == "passed" else "FAIL"))


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name, outcome in _ACCEPTANCE:
        terminalreporter.write_line(f"{outcome}  {name}")
