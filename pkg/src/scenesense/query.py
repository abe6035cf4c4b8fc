"""Render rooms into query strings for scoring, embedding, and export.

Three string families:
  * label queries, one per candidate room label, scored by a language model
    ("A room containing X, Y, and Z is called a kitchen.")
  * a single description string for embedding pipelines
    ("This room contains X, Y, and Z.")
  * a structured serialization of room extents and object positions for
    models that accept non-natural-language input.

Plus the permutation bootstrap that expands one labeled room into many
(text, label) training rows.

All renderers are pure; identical inputs yield byte-identical strings.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass
from decimal import ROUND_HALF_UP, Decimal
from pathlib import Path
from typing import TYPE_CHECKING, Iterable, Sequence

from .errors import ValidationError
from .scene_graph import LabelSpace, ObjectNode, RoomNode, RoomView

if TYPE_CHECKING:
    from .cooccurrence import InformativenessIndex

VOWELS = frozenset("aeiou")

ZERO_SHOT_TEMPLATE = "A room containing {objects} is called {article} {room}."
EMBEDDING_TEMPLATE = "This room contains {objects}."

#: (k, n) pairs: all k-object ordered arrangements of the n most informative
#: present objects per room.
DEFAULT_BOOTSTRAP_SCHEDULE: tuple[tuple[int, int], ...] = ((1, 2), (2, 3), (3, 4))


@dataclass(frozen=True)
class QueryBundle:
    """Rendered strings for one room under one method.

    strings is a dict label -> string for the zero_shot method and a single
    string otherwise.
    """

    room_id: str
    method: str  # zero_shot | embedding | structured
    strings: dict[str, str] | str
    objects_used: tuple[str, ...]


@dataclass(frozen=True)
class StructuredSkip:
    """Marker for rooms excluded from structured export (too many objects)."""

    room_id: str
    n_objects: int


@dataclass(frozen=True)
class StructuredStringConfig:
    include_room_size: bool = True
    include_positions: bool = True
    max_objects: int = 100
    decimals: int = 3

    def __post_init__(self):
        if self.max_objects < 1:
            raise ValidationError(f"max_objects must be >= 1, got {self.max_objects}")
        if self.decimals < 0:
            raise ValidationError(f"decimals must be >= 0, got {self.decimals}")


def indefinite_article(word: str) -> str:
    """"an" before a vowel letter, "a" otherwise (first-letter test)."""
    return "an" if word[:1].lower() in VOWELS else "a"


def join_labels(labels: Sequence[str]) -> str:
    """Comma-joined list with a final "and"; two items use a bare "and"."""
    if not labels:
        raise ValidationError("cannot render an empty object list")
    if len(labels) == 1:
        return labels[0]
    if len(labels) == 2:
        return f"{labels[0]} and {labels[1]}"
    return ", ".join(labels[:-1]) + f", and {labels[-1]}"


def zero_shot_query(objects: Sequence[str], room_label: str) -> str:
    return ZERO_SHOT_TEMPLATE.format(
        objects=join_labels(objects),
        article=indefinite_article(room_label),
        room=room_label,
    )


def embedding_query(objects: Sequence[str]) -> str:
    return EMBEDDING_TEMPLATE.format(objects=join_labels(objects))


def render_zero_shot(objects: Sequence[str], space: LabelSpace, room_id: str = "") -> QueryBundle:
    """One label query per room label, sharing the same object list.

    Callers are responsible for ordering objects (most informative first).
    """
    if not objects:
        raise ValidationError("zero-shot query needs at least one object")
    strings = {r: zero_shot_query(objects, r) for r in space.room_labels}
    return QueryBundle(room_id=room_id, method="zero_shot", strings=strings, objects_used=tuple(objects))


def render_embedding(objects: Sequence[str], room_id: str = "") -> QueryBundle:
    if not objects:
        raise ValidationError("embedding query needs at least one object")
    return QueryBundle(
        room_id=room_id,
        method="embedding",
        strings=embedding_query(objects),
        objects_used=tuple(objects),
    )


def format_fixed(value: float, decimals: int) -> str:
    """Fixed-point formatting, ties rounded away from zero, no negative zero."""
    quantum = Decimal(1).scaleb(-decimals)
    rounded = Decimal(value).quantize(quantum, rounding=ROUND_HALF_UP)
    if rounded == 0:
        rounded = abs(rounded)
    return f"{rounded:.{decimals}f}"


def render_structured(
    room: RoomNode,
    objects: Sequence[ObjectNode],
    cfg: StructuredStringConfig = StructuredStringConfig(),
) -> QueryBundle | StructuredSkip:
    """Serialize room extents and object positions relative to room center.

    Objects are listed in their given (scene-graph insertion) order. Rooms
    with more than cfg.max_objects objects yield a StructuredSkip instead
    of a bundle.
    """
    if len(objects) > cfg.max_objects:
        return StructuredSkip(room_id=room.id, n_objects=len(objects))

    center = tuple((lo + hi) / 2.0 for lo, hi in zip(room.bbox_min, room.bbox_max))
    lines: list[str] = []
    if cfg.include_room_size:
        lines.append("Room Size:")
        for axis, lo, hi in zip("xyz", room.bbox_min, room.bbox_max):
            lines.append(f"{axis} {format_fixed(hi - lo, cfg.decimals)}")
        lines.append("")
    lines.append("Object Locations:")
    for obj in objects:
        lines.append(obj.label)
        if cfg.include_positions:
            for axis, pos, c in zip("xyz", obj.position, center):
                lines.append(f"{axis} {format_fixed(pos - c, cfg.decimals)}")
        lines.append("")
    while lines and lines[-1] == "":
        lines.pop()
    return QueryBundle(
        room_id=room.id,
        method="structured",
        strings="\n".join(lines) + "\n",
        objects_used=tuple(o.label for o in objects),
    )


# ---------------------------------------------------------------------------
# Permutation bootstrap


@dataclass(frozen=True)
class BootstrapRow:
    text: str
    label: str
    room_id: str
    objects: tuple[str, ...]


def bootstrap_row_count(n_distinct: int, schedule: Iterable[tuple[int, int]]) -> int:
    """Closed-form row count: sum of P(n', k') with n' = min(n, distinct)."""
    total = 0
    for k, n in schedule:
        n_eff = min(n, n_distinct)
        k_eff = min(k, n_eff)
        perms = 1
        for i in range(k_eff):
            perms *= n_eff - i
        total += perms
    return total


def bootstrap_queries(
    view: RoomView,
    index: "InformativenessIndex",
    schedule: Iterable[tuple[int, int]] = DEFAULT_BOOTSTRAP_SCHEDULE,
    tie_break: str = "lexicographic",
) -> list[BootstrapRow]:
    """Expand one labeled room into all k-object arrangements of its n most
    informative objects, for every (k, n) in the schedule.

    Rooms with fewer than n distinct labels use all of them, with k capped
    at that count. Enumeration order is deterministic: the n-list comes out
    of the informativeness ranking, arrangements in lexicographic position
    order.
    """
    schedule = tuple(schedule)
    if not schedule:
        raise ValidationError("bootstrap schedule is empty")
    if view.label is None:
        raise ValidationError(f"room {view.room_id!r} has no label; bootstrap needs labeled rooms")
    if not view.object_labels:
        raise ValidationError(f"room {view.room_id!r} has no objects")

    rows: list[BootstrapRow] = []
    for k, n in schedule:
        chosen = index.select(view.object_labels, k=n, tie_break=tie_break)
        k_eff = min(k, len(chosen))
        for arrangement in itertools.permutations(chosen, k_eff):
            rows.append(
                BootstrapRow(
                    text=embedding_query(arrangement),
                    label=view.label,
                    room_id=view.room_id,
                    objects=arrangement,
                )
            )
    return rows


# ---------------------------------------------------------------------------
# JSON-lines persistence


def dump_bootstrap_rows(rows: Iterable[BootstrapRow]) -> str:
    return "".join(
        json.dumps({"text": r.text, "label": r.label, "room_id": r.room_id}, sort_keys=True) + "\n"
        for r in rows
    )


def load_bootstrap_rows(path: str | Path) -> list[BootstrapRow]:
    rows = []
    for line_no, line in enumerate(Path(path).read_text().splitlines(), start=1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
            rows.append(
                BootstrapRow(text=rec["text"], label=rec["label"], room_id=rec["room_id"], objects=())
            )
        except (json.JSONDecodeError, KeyError) as exc:
            raise ValidationError(f"{path}:{line_no}: bad bootstrap row: {exc}") from exc
    return rows


def dump_structured_rows(results: Iterable[tuple[QueryBundle | StructuredSkip, str | None]]) -> str:
    """Serialize (bundle-or-skip, room_label) pairs as JSON lines."""
    out = []
    for rendered, label in results:
        if isinstance(rendered, StructuredSkip):
            rec = {"text": "", "label": label, "room_id": rendered.room_id, "skipped": True}
        else:
            rec = {"text": rendered.strings, "label": label, "room_id": rendered.room_id, "skipped": False}
        out.append(json.dumps(rec, sort_keys=True) + "\n")
    return "".join(out)
