import json
from pathlib import Path

import numpy as np
import pytest

from scenesense.cooccurrence import CooccurrenceTable, count_cooccurrences
from scenesense.scene_graph import LabelSpace, RoomView, load_scene_graph

DATA_DIR = Path(__file__).parent / "data"
GOLDEN_DIR = DATA_DIR / "golden"


@pytest.fixture(scope="session")
def data_dir():
    return DATA_DIR


@pytest.fixture(scope="session")
def golden_dir():
    return GOLDEN_DIR


@pytest.fixture(scope="session")
def toy_space():
    return LabelSpace.from_file(DATA_DIR / "toyspace.json")


@pytest.fixture(scope="session")
def toy_document():
    return json.loads((DATA_DIR / "toygraph.json").read_text())


@pytest.fixture()
def toy_graph(toy_space, toy_document):
    graph, _ = load_scene_graph(toy_document, toy_space)
    return graph


def make_view(room_id, label, object_labels, building="b"):
    return RoomView(room_id=room_id, label=label, object_labels=tuple(object_labels), building_id=building)


def make_space(n_objects=7, n_rooms=3, name="synth"):
    return LabelSpace(
        name=name,
        object_labels=tuple(f"obj{i:03d}" for i in range(n_objects)),
        room_labels=tuple(f"room{i:02d}" for i in range(n_rooms)),
    )


def random_corpus(space, n_rooms, rng, min_objects=1, max_objects=5):
    """Random labeled views over a label space: each room draws a label and a
    multiset of object labels."""
    views = []
    for i in range(n_rooms):
        label = space.room_labels[rng.integers(len(space.room_labels))]
        count = int(rng.integers(min_objects, max_objects + 1))
        labels = [space.object_labels[rng.integers(len(space.object_labels))] for _ in range(count)]
        views.append(
            RoomView(
                room_id=f"r{i:04d}",
                label=label,
                object_labels=tuple(labels),
                building_id=f"b{i % 7}",
            )
        )
    return views


def random_count_table(space, rng, alpha=1.0, max_count=20):
    counts = rng.integers(0, max_count + 1, size=(len(space.object_labels), len(space.room_labels)))
    return CooccurrenceTable(label_space=space, source="ground_truth", alpha=alpha, counts=counts)


@pytest.fixture(scope="session")
def toy_table(toy_space, toy_document):
    graph, _ = load_scene_graph(toy_document, toy_space)
    from scenesense.scene_graph import preprocess

    processed, _ = preprocess(graph)
    return count_cooccurrences(processed.room_views(), toy_space, alpha=1.0)


# ---------------------------------------------------------------------------
# Acceptance summary: one line per criterion at the end of the run.

_ACCEPTANCE_RESULTS: dict[str, str] = {}


def pytest_runtest_logreport(report):
    if report.when != "call" and not (report.when == "setup" and report.skipped):
        return
    if "test_acceptance.py" not in str(report.nodeid):
        return
    name = report.nodeid.split("::")[-1]
    outcome = {"passed": "PASS", "failed": "FAIL", "skipped": "SKIP"}.get(report.outcome, report.outcome)
    _ACCEPTANCE_RESULTS[name] = outcome


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE_RESULTS:
        return
    terminalreporter.write_sep("-", "acceptance criteria")
    for name in sorted(_ACCEPTANCE_RESULTS):
        terminalreporter.write_line(f"{_ACCEPTANCE_RESULTS[name]}  {name}")
