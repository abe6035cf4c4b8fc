"""Object-to-room conditional distributions and entropy-based object ranking.

The room-given-object conditional p(room | object) comes from one of two
sources: counting labeled rooms (with add-alpha smoothing), or softmaxing
language-model scores of per-pair query sentences. The entropy of that
conditional ranks objects: objects concentrated in few room types carry low
entropy and identify a room well, ubiquitous ones approach the uniform
maximum log(#room labels).
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING, Iterable, Sequence

import numpy as np

from .errors import BackendError, ValidationError
from .query import zero_shot_query
from .scene_graph import LabelSpace, RoomView
from .validation import as_distribution, check_choice, check_nonnegative

if TYPE_CHECKING:
    from .lm_backend import LmScorer

GROUND_TRUTH = "ground_truth"
PROXY = "proxy"

COUNT_MODES = ("presence", "multiplicity")
TIE_BREAKS = ("lexicographic", "stable_input_order")


@dataclass
class CooccurrenceTable:
    """Object-by-room matrix: integer counts (ground truth) or probability
    rows (proxy). Rows follow label_space.object_labels, columns follow
    label_space.room_labels."""

    label_space: LabelSpace
    source: str
    alpha: float = 1.0
    counts: np.ndarray | None = None
    probs: np.ndarray | None = None
    _object_index: dict[str, int] = field(init=False, repr=False)

    def __post_init__(self):
        check_choice(self.source, (GROUND_TRUTH, PROXY), "source")
        check_nonnegative(self.alpha, "alpha")
        shape = (len(self.label_space.object_labels), len(self.label_space.room_labels))
        if self.source == GROUND_TRUTH:
            if self.counts is None or self.probs is not None:
                raise ValidationError("ground-truth table stores counts, not probs")
            self.counts = np.asarray(self.counts, dtype=np.int64)
            if self.counts.shape != shape:
                raise ValidationError(f"counts shape {self.counts.shape} != {shape}")
            if np.any(self.counts < 0):
                raise ValidationError("counts must be nonnegative")
        else:
            if self.probs is None or self.counts is not None:
                raise ValidationError("proxy table stores probability rows, not counts")
            self.probs = np.asarray(self.probs, dtype=float)
            if self.probs.shape != shape:
                raise ValidationError(f"probs shape {self.probs.shape} != {shape}")
            if np.any(self.probs < 0):
                raise ValidationError("probabilities must be nonnegative")
            sums = self.probs.sum(axis=1)
            if np.any(np.abs(sums - 1.0) > 1e-9):
                worst = int(np.argmax(np.abs(sums - 1.0)))
                raise ValidationError(
                    f"proxy row {self.label_space.object_labels[worst]!r} sums to {sums[worst]}"
                )
        self._object_index = {o: i for i, o in enumerate(self.label_space.object_labels)}

    @property
    def n_rooms(self) -> int:
        return len(self.label_space.room_labels)

    def conditional_array(self, object_label: str) -> np.ndarray:
        """p(room | object) as an array over room_labels.

        Unknown or unseen objects yield the uniform distribution.
        """
        idx = self._object_index.get(object_label)
        if self.source == PROXY:
            if idx is None:
                return np.full(self.n_rooms, 1.0 / self.n_rooms)
            return self.probs[idx].copy()
        row = self.counts[idx].astype(float) if idx is not None else np.zeros(self.n_rooms)
        denom = row.sum() + self.alpha * self.n_rooms
        if denom == 0.0:
            return np.full(self.n_rooms, 1.0 / self.n_rooms)
        return (row + self.alpha) / denom


@dataclass(frozen=True)
class SelectionConfig:
    k: int = 3
    tie_break: str = "lexicographic"

    def __post_init__(self):
        if self.k < 1:
            raise ValidationError(f"k must be >= 1, got {self.k}")
        check_choice(self.tie_break, TIE_BREAKS, "tie_break")


class InformativenessIndex:
    """Per-object entropy of p(room | object), in nats.

    Lower entropy means more informative. Labels absent from the index get
    the uniform maximum log(#rooms), so unknown objects never outrank
    known ones.
    """

    def __init__(self, entropies: dict[str, float], n_room_labels: int):
        self.entropies = dict(entropies)
        self.n_room_labels = n_room_labels
        self.default_entropy = math.log(n_room_labels) if n_room_labels > 1 else 0.0

    def get(self, label: str) -> float:
        return self.entropies.get(label, self.default_entropy)

    def select(self, present_labels: Sequence[str], k: int, tie_break: str = "lexicographic") -> list[str]:
        """The k distinct present labels with smallest entropy, ascending."""
        check_choice(tie_break, TIE_BREAKS, "tie_break")
        distinct = tuple(dict.fromkeys(present_labels))
        if not distinct:
            raise ValidationError("no object labels to select from")
        if tie_break == "lexicographic":
            ranked = sorted(distinct, key=lambda lab: (self.get(lab), lab))
        else:
            ranked = sorted(distinct, key=self.get)
        return ranked[:k]

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["object_label", "entropy"])
        for label, h in self.entropies.items():
            writer.writerow([label, repr(h)])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str, space: LabelSpace) -> "InformativenessIndex":
        reader = csv.reader(io.StringIO(text))
        header = next(reader, None)
        if header != ["object_label", "entropy"]:
            raise ValidationError(f"bad informativeness CSV header: {header}")
        entropies = {}
        for row in reader:
            if not row:
                continue
            label, value = row
            entropies[label] = float(value)
        return cls(entropies, n_room_labels=len(space.room_labels))


# ---------------------------------------------------------------------------
# Builders


def count_cooccurrences(
    rooms: Iterable[RoomView],
    space: LabelSpace,
    mode: str = "presence",
    alpha: float = 1.0,
) -> CooccurrenceTable:
    """Tally labeled rooms into an object-by-room count matrix.

    Presence mode counts a room once per distinct object label it contains;
    multiplicity mode counts every instance. Object labels outside the
    space are ignored (they stay maximally uninformative).
    """
    check_choice(mode, COUNT_MODES, "mode")
    rooms = list(rooms)
    if not rooms:
        raise ValidationError("no training rooms")
    obj_idx = {o: i for i, o in enumerate(space.object_labels)}
    room_idx = {r: i for i, r in enumerate(space.room_labels)}
    counts = np.zeros((len(obj_idx), len(room_idx)), dtype=np.int64)
    for view in rooms:
        if view.label is None:
            raise ValidationError(f"room {view.room_id!r} is unlabeled; counting needs labels")
        j = room_idx.get(view.label)
        if j is None:
            raise ValidationError(f"room {view.room_id!r} label {view.label!r} not in space {space.name!r}")
        labels = view.distinct_labels if mode == "presence" else view.object_labels
        for lab in labels:
            i = obj_idx.get(lab)
            if i is not None:
                counts[i, j] += 1
    return CooccurrenceTable(label_space=space, source=GROUND_TRUTH, alpha=alpha, counts=counts)


def conditional_gt(table: CooccurrenceTable, object_label: str) -> dict[str, float]:
    """Smoothed p(room | object) from counts: (c + alpha) / (sum + alpha*K)."""
    if table.source != GROUND_TRUTH:
        raise ValidationError("conditional_gt needs a ground-truth table")
    arr = table.conditional_array(object_label)
    return dict(zip(table.label_space.room_labels, arr.tolist()))


def proxy_row(scorer: "LmScorer", object_label: str, space: LabelSpace) -> np.ndarray:
    """Softmax over room labels of the scores of per-pair query sentences."""
    queries = [zero_shot_query([object_label], r) for r in space.room_labels]
    try:
        scores = np.asarray(scorer.batch_score(queries), dtype=float)
    except BackendError as exc:
        raise type(exc)(f"proxy scoring failed for object {object_label!r}: {exc}") from exc
    return _softmax(scores)


def conditional_proxy(scorer: "LmScorer", object_label: str, space: LabelSpace) -> dict[str, float]:
    return dict(zip(space.room_labels, proxy_row(scorer, object_label, space).tolist()))


def build_proxy_table(scorer: "LmScorer", space: LabelSpace) -> CooccurrenceTable:
    """Score every (object, room) query sentence and softmax per object row."""
    queries = [zero_shot_query([o], r) for o in space.object_labels for r in space.room_labels]
    scores = np.asarray(scorer.batch_score(queries), dtype=float)
    matrix = scores.reshape(len(space.object_labels), len(space.room_labels))
    probs = np.vstack([_softmax(row) for row in matrix])
    return CooccurrenceTable(label_space=space, source=PROXY, probs=probs)


def _softmax(scores: np.ndarray) -> np.ndarray:
    shifted = scores - scores.max()
    expd = np.exp(shifted)
    return expd / expd.sum()


def sum_log_conditionals(table: CooccurrenceTable, object_labels: Sequence[str]) -> np.ndarray:
    """Sum of log p(room | object) over the given labels, per room label.

    Zero conditionals contribute -inf. Every caller that needs two paths to
    agree bit-for-bit must pass labels in the same order; summation happens
    in the order given.
    """
    totals = np.zeros(table.n_rooms)
    for obj in object_labels:
        row = table.conditional_array(obj)
        with np.errstate(divide="ignore"):
            totals += np.where(row > 0, np.log(np.where(row > 0, row, 1.0)), -np.inf)
    return totals


# ---------------------------------------------------------------------------
# Entropy and selection


def entropy(dist) -> float:
    """Shannon entropy in nats, with 0*log(0) taken as 0.

    Accepts a label->probability mapping or a bare probability sequence;
    the input must sum to 1 within 1e-6 and be nonnegative.
    """
    _, probs = as_distribution(dist, "distribution", tol=1e-6)
    nonzero = probs[probs > 0]
    return float(-(nonzero * np.log(nonzero)).sum())


def build_index(table: CooccurrenceTable) -> InformativenessIndex:
    """Entropy of the conditional row for every object label in the space."""
    entropies = {
        label: entropy(table.conditional_array(label))
        for label in table.label_space.object_labels
    }
    return InformativenessIndex(entropies, n_room_labels=table.n_rooms)


def select_informative(
    room: RoomView | Sequence[str],
    index: InformativenessIndex,
    cfg: SelectionConfig = SelectionConfig(),
) -> list[str]:
    """The cfg.k lowest-entropy distinct labels present in the room,
    ordered ascending by entropy (all of them when fewer than k)."""
    labels = room.object_labels if isinstance(room, RoomView) else tuple(room)
    if not labels:
        raise ValidationError("room has no objects")
    return index.select(labels, cfg.k, cfg.tie_break)


# ---------------------------------------------------------------------------
# CSV persistence (header row = room labels, one row per object label)


def table_csv_text(table: CooccurrenceTable) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["object_label", *table.label_space.room_labels])
    for i, label in enumerate(table.label_space.object_labels):
        if table.source == GROUND_TRUTH:
            row = [int(v) for v in table.counts[i]]
        else:
            row = [repr(float(v)) for v in table.probs[i]]
        writer.writerow([label, *row])
    return buf.getvalue()


def table_sidecar(table: CooccurrenceTable) -> dict:
    return {"source": table.source, "alpha": table.alpha, "label_space": table.label_space.name}


def save_table(table: CooccurrenceTable, path: str | Path) -> None:
    path = Path(path)
    path.write_text(table_csv_text(table))
    Path(f"{path}.json").write_text(json.dumps(table_sidecar(table), indent=2, sort_keys=True) + "\n")


def load_table(path: str | Path, space: LabelSpace) -> CooccurrenceTable:
    path = Path(path)
    sidecar_path = Path(f"{path}.json")
    if not sidecar_path.exists():
        raise ValidationError(f"missing table sidecar {sidecar_path}")
    sidecar = json.loads(sidecar_path.read_text())
    if sidecar.get("label_space") != space.name:
        raise ValidationError(
            f"table was built for label space {sidecar.get('label_space')!r}, not {space.name!r}"
        )
    reader = csv.reader(io.StringIO(path.read_text()))
    header = next(reader, None)
    if header != ["object_label", *space.room_labels]:
        raise ValidationError(f"{path}: header does not match room labels of {space.name!r}")
    rows = {}
    for row in reader:
        if not row:
            continue
        rows[row[0]] = [float(v) for v in row[1:]]
    try:
        matrix = np.array([rows[o] for o in space.object_labels], dtype=float)
    except KeyError as exc:
        raise ValidationError(f"{path}: missing row for object label {exc}") from exc
    if sidecar["source"] == GROUND_TRUTH:
        return CooccurrenceTable(
            label_space=space,
            source=GROUND_TRUTH,
            alpha=float(sidecar["alpha"]),
            counts=matrix.astype(np.int64),
        )
    return CooccurrenceTable(label_space=space, source=PROXY, probs=matrix)


def save_index(index: InformativenessIndex, path: str | Path) -> None:
    Path(path).write_text(index.to_csv())


def load_index(path: str | Path, space: LabelSpace) -> InformativenessIndex:
    return InformativenessIndex.from_csv(Path(path).read_text(), space)
