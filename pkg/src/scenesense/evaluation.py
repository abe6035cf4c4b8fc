"""Experiment harness: dataset splits, accuracy reports, generalization runs.

Splits keep buildings atomic while matching room-count ratios greedily.
Reports carry overall accuracy, per-true-label recall, a confusion matrix,
and the resolved configuration, and serialize deterministically so reruns
with identical inputs are byte-identical.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from sklearn.base import clone

from .classifiers import ClassificationResult, EmbeddingRoomClassifier, classify_embedding
from .cooccurrence import InformativenessIndex, SelectionConfig
from .errors import DegenerateScoreError, ValidationError
from .scene_graph import LabelSpace, RoomView, SceneGraph
from .validation import check_choice

ON_ERROR_MODES = ("exclude", "strict")


@dataclass(frozen=True)
class SplitSpec:
    ratios: tuple[float, float, float] = (0.5, 0.2, 0.3)
    unit: str = "building"
    seed: int = 0

    def __post_init__(self):
        check_choice(self.unit, ("building", "room"), "unit")
        if len(self.ratios) != 3 or any(r < 0 for r in self.ratios):
            raise ValidationError(f"ratios must be 3 nonnegative reals, got {self.ratios}")
        if abs(sum(self.ratios) - 1.0) > 1e-9:
            raise ValidationError(f"ratios must sum to 1, got {sum(self.ratios)}")


@dataclass
class Split:
    train: list[RoomView]
    val: list[RoomView]
    test: list[RoomView]
    spec: SplitSpec

    @property
    def realized_ratios(self) -> tuple[float, float, float]:
        total = len(self.train) + len(self.val) + len(self.test)
        if total == 0:
            return (0.0, 0.0, 0.0)
        return (len(self.train) / total, len(self.val) / total, len(self.test) / total)

    def to_dict(self) -> dict:
        return {
            "ratios": list(self.spec.ratios),
            "unit": self.spec.unit,
            "seed": self.spec.seed,
            "sizes": [len(self.train), len(self.val), len(self.test)],
            "realized_ratios": list(self.realized_ratios),
        }


def _as_views(graphs_or_views: Iterable) -> list[RoomView]:
    views: list[RoomView] = []
    for item in graphs_or_views:
        if isinstance(item, SceneGraph):
            views.extend(item.room_views())
        elif isinstance(item, RoomView):
            views.append(item)
        else:
            raise ValidationError(f"expected SceneGraph or RoomView, got {type(item).__name__}")
    return views


def split_rooms(graphs_or_views: Iterable, spec: SplitSpec) -> Split:
    """Partition rooms into train/val/test.

    unit="building" shuffles buildings with the seeded generator and
    assigns each greedily to the partition furthest below its target room
    count, so no building straddles partitions. unit="room" shuffles and
    cuts rooms directly.
    """
    views = _as_views(graphs_or_views)
    if not views:
        raise ValidationError("no rooms to split")
    rng = np.random.default_rng(spec.seed)
    parts: list[list[RoomView]] = [[], [], []]

    if spec.unit == "room":
        order = rng.permutation(len(views))
        n = len(views)
        cut1 = int(n * spec.ratios[0] + 1e-9)
        cut2 = int(n * (spec.ratios[0] + spec.ratios[1]) + 1e-9)
        for pos, idx in enumerate(order):
            parts[0 if pos < cut1 else 1 if pos < cut2 else 2].append(views[idx])
    else:
        by_building: dict[str, list[RoomView]] = {}
        for v in views:
            by_building.setdefault(v.building_id, []).append(v)
        building_ids = sorted(by_building)
        active = [i for i, r in enumerate(spec.ratios) if r > 0]
        if len(building_ids) < len(active):
            raise ValidationError(
                f"{len(building_ids)} buildings cannot fill {len(active)} nonempty partitions"
            )
        shuffled = [building_ids[i] for i in rng.permutation(len(building_ids))]
        total = len(views)
        targets = [r * total for r in spec.ratios]
        counts = [0, 0, 0]
        for b in shuffled:
            # most-starved active partition; ties go to the earlier one
            best = max(active, key=lambda i: (targets[i] - counts[i], -i))
            parts[best].extend(by_building[b])
            counts[best] += len(by_building[b])

    return Split(train=parts[0], val=parts[1], test=parts[2], spec=spec)


# ---------------------------------------------------------------------------
# Reports


@dataclass
class EvalReport:
    method: str
    room_labels: list[str]
    n_rooms: int
    n_classified: int
    n_correct: int
    overall_accuracy: float
    per_label: dict[str, dict]
    confusion: list[list[int]]  # rows = true label, cols = predicted
    failures: list[list[str]] = field(default_factory=list)  # [room_id, message]
    on_error: str = "exclude"
    config: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "room_labels": self.room_labels,
            "n_rooms": self.n_rooms,
            "n_classified": self.n_classified,
            "n_correct": self.n_correct,
            "overall_accuracy": self.overall_accuracy,
            "per_label": self.per_label,
            "confusion": self.confusion,
            "failures": self.failures,
            "on_error": self.on_error,
            "config": self.config,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def confusion_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["true\\predicted", *self.room_labels])
        for label, row in zip(self.room_labels, self.confusion):
            writer.writerow([label, *row])
        return buf.getvalue()

    def per_label_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["room_label", "correct", "total", "accuracy"])
        for label in self.room_labels:
            entry = self.per_label[label]
            acc = "" if entry["accuracy"] is None else repr(entry["accuracy"])
            writer.writerow([label, entry["correct"], entry["total"], acc])
        return buf.getvalue()


def _classify_views(classifier, views: Sequence[RoomView]):
    """Run classify on each view; per-room failures are collected, backend
    failures propagate (they would poison every room anyway)."""
    results: list[tuple[RoomView, ClassificationResult]] = []
    failures: list[tuple[RoomView, str]] = []
    for view in views:
        try:
            results.append((view, classifier.classify(view)))
        except (DegenerateScoreError, ValidationError) as exc:
            failures.append((view, str(exc)))
    return results, failures


def report_from_results(
    results: Sequence[tuple[RoomView, ClassificationResult]],
    failures: Sequence[tuple[RoomView, str]],
    room_labels: Sequence[str],
    method: str,
    on_error: str = "exclude",
    config: dict | None = None,
) -> EvalReport:
    room_labels = list(room_labels)
    label_idx = {r: i for i, r in enumerate(room_labels)}
    k = len(room_labels)
    confusion = [[0] * k for _ in range(k)]
    per_label = {r: {"correct": 0, "total": 0, "accuracy": None} for r in room_labels}

    for view, result in results:
        if view.label not in label_idx:
            raise ValidationError(f"room {view.room_id!r} has label {view.label!r} outside the label set")
        i = label_idx[view.label]
        j = label_idx[result.predicted]
        confusion[i][j] += 1
        per_label[view.label]["total"] += 1
        if i == j:
            per_label[view.label]["correct"] += 1

    n_correct = sum(confusion[i][i] for i in range(k))
    n_classified = len(results)
    if on_error == "strict":
        # failed rooms count against accuracy under their true label
        for view, _ in failures:
            if view.label in per_label:
                per_label[view.label]["total"] += 1
        denominator = n_classified + len(failures)
    else:
        denominator = n_classified
    for entry in per_label.values():
        if entry["total"]:
            entry["accuracy"] = entry["correct"] / entry["total"]

    return EvalReport(
        method=method,
        room_labels=room_labels,
        n_rooms=n_classified + len(failures),
        n_classified=n_classified,
        n_correct=n_correct,
        overall_accuracy=n_correct / denominator if denominator else 0.0,
        per_label=per_label,
        confusion=confusion,
        failures=[[v.room_id, msg] for v, msg in failures],
        on_error=on_error,
        config=config or {},
    )


def evaluate(
    classifier,
    views: Sequence[RoomView],
    method: str | None = None,
    on_error: str = "exclude",
    config: dict | None = None,
) -> EvalReport:
    """Classify every labeled room and assemble an accuracy report.

    classifier must expose classify(view) and a label_space. Rooms whose
    classification raises a per-room error are excluded with a failure row
    (on_error="exclude") or counted as wrong (on_error="strict").
    """
    check_choice(on_error, ON_ERROR_MODES, "on_error")
    views = list(views)
    if not views:
        raise ValidationError("no rooms to evaluate")
    unlabeled = [v.room_id for v in views if v.label is None]
    if unlabeled:
        raise ValidationError(f"rooms without labels cannot be scored: {unlabeled[:5]}")
    room_labels = classifier.label_space.room_labels
    results, failures = _classify_views(classifier, views)
    method = method or (results[0][1].method if results else "unknown")
    return report_from_results(results, failures, room_labels, method, on_error, config)


# ---------------------------------------------------------------------------
# Generalization experiments


@dataclass
class HoldoutReport:
    holdout_labels: list[str]
    overall: EvalReport
    per_object: dict[str, dict]
    n_rows_total: int
    n_rows_removed: int

    def to_dict(self) -> dict:
        return {
            "holdout_labels": self.holdout_labels,
            "overall": self.overall.to_dict(),
            "per_object": self.per_object,
            "n_rows_total": self.n_rows_total,
            "n_rows_removed": self.n_rows_removed,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


def holdout_experiment(
    views: Sequence[RoomView],
    holdout_labels: Sequence[str],
    classifier: EmbeddingRoomClassifier,
    on_error: str = "exclude",
    config: dict | None = None,
) -> HoldoutReport:
    """Train with every row mentioning a holdout object removed, then score
    exactly the rooms whose queries mention one.

    A room belongs to the held-out population when its query (the k most
    informative objects) contains any holdout label; it contributes to the
    per-object row of each holdout label its query contains, so one room
    can appear in several rows.
    """
    holdout = set(holdout_labels)
    if not holdout:
        raise ValidationError("holdout label set is empty")
    views = list(views)

    def query_objects(view: RoomView) -> set[str]:
        return set(classifier.index.select(view.object_labels, classifier.k, classifier.tie_break))

    held_out = [v for v in views if query_objects(v) & holdout]
    if not held_out:
        raise ValidationError(f"no rooms have queries mentioning {sorted(holdout)}")

    rows = classifier.bootstrap(views)
    kept_rows = [r for r in rows if not set(r.objects) & holdout]

    trained = clone(classifier)
    trained.fit_rows(kept_rows)

    results, failures = _classify_views(trained, held_out)
    overall = report_from_results(
        results, failures, classifier.label_space.room_labels, "embedding", on_error, config
    )

    per_object: dict[str, dict] = {}
    for label in sorted(holdout):
        relevant = [(v, r) for v, r in results if label in query_objects(v)]
        correct = sum(1 for v, r in relevant if r.predicted == v.label)
        per_object[label] = {
            "correct": correct,
            "total": len(relevant),
            "accuracy": correct / len(relevant) if relevant else None,
        }

    return HoldoutReport(
        holdout_labels=sorted(holdout),
        overall=overall,
        per_object=per_object,
        n_rows_total=len(rows),
        n_rows_removed=len(rows) - len(kept_rows),
    )


def transfer_experiment(
    train_views: Sequence[RoomView],
    test_views: Sequence[RoomView],
    classifier: EmbeddingRoomClassifier,
    test_space: LabelSpace,
    test_index: InformativenessIndex,
    split_spec: SplitSpec | None = None,
    on_error: str = "exclude",
    config: dict | None = None,
) -> EvalReport:
    """Train on one object vocabulary, evaluate on another.

    The two label spaces must share room labels. Queries are plain strings,
    so the trained head never sees object labels directly; only the
    test-side informativeness index is needed to build test queries.
    """
    if tuple(classifier.label_space.room_labels) != tuple(test_space.room_labels):
        raise ValidationError(
            f"room label spaces differ: {classifier.label_space.name!r} vs {test_space.name!r}"
        )
    spec = split_spec or SplitSpec(ratios=(0.4, 0.6, 0.0), unit="building", seed=0)
    parts = split_rooms(train_views, spec)

    trained = clone(classifier)
    trained.fit(parts.train, val_views=parts.val or None)

    selection = SelectionConfig(k=classifier.k, tie_break=classifier.tie_break)
    results: list[tuple[RoomView, ClassificationResult]] = []
    failures: list[tuple[RoomView, str]] = []
    for view in test_views:
        try:
            result = classify_embedding(
                view, classifier.embedder, trained.head_, test_index, selection,
                test_space.room_labels,
            )
            results.append((view, result))
        except (DegenerateScoreError, ValidationError) as exc:
            failures.append((view, str(exc)))
    merged_config = {"split": parts.to_dict(), **(config or {})}
    return report_from_results(
        results, failures, test_space.room_labels, "embedding_transfer", on_error, merged_config
    )
