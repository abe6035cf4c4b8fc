"""Scene-graph data model, JSON file format, and preprocessing.

A scene graph is a flat record of buildings, rooms, and objects with
axis-aligned bounding boxes in a shared world frame (meters). Preprocessing
removes uninformative objects, discards non-room regions, and repairs
object-to-room assignments using bounding-box containment of the object
center. All operations are pure: they return a new graph plus a report.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field, replace
from pathlib import Path

from .errors import ParseError, ValidationError
from .validation import Vec3, check_bbox, check_inside, check_vec3

# Labels treated as "no label" in source data. Rooms carrying one of these
# are dropped during filtering; a missing/null room label is a legitimate
# inference-time unknown and is kept.
UNLABELED_SENTINELS = frozenset({"", "none"})

DEFAULT_OUTDOOR_ROOM_LABELS = ("yard", "balcony", "porch")


@dataclass(frozen=True)
class LabelSpace:
    """A vocabulary of object labels and room labels.

    rejected lists object labels that are filtered out before inference
    (structural categories and catch-alls). aliases maps label variants,
    e.g. misspellings in source data, onto canonical labels and is applied
    at load time. label_map optionally maps this space's object labels
    into another space's labels (one source label may map to several
    candidates, tried in order).
    """

    name: str
    object_labels: tuple[str, ...]
    room_labels: tuple[str, ...]
    rejected: frozenset[str] = frozenset()
    aliases: dict[str, str] = field(default_factory=dict)
    label_map: dict[str, tuple[str, ...]] = field(default_factory=dict)
    outdoor_room_labels: tuple[str, ...] = DEFAULT_OUTDOOR_ROOM_LABELS

    def __post_init__(self):
        for kind, labels in (("object_labels", self.object_labels), ("room_labels", self.room_labels)):
            if not labels:
                raise ValidationError(f"label space {self.name!r}: {kind} is empty")
            if len(set(labels)) != len(labels):
                dupes = [x for x, n in Counter(labels).items() if n > 1]
                raise ValidationError(f"label space {self.name!r}: duplicate {kind}: {dupes}")
            overlap = set(labels) & self.rejected
            if overlap:
                raise ValidationError(f"label space {self.name!r}: {kind} contains rejected labels {sorted(overlap)}")
        unknown_keys = set(self.label_map) - set(self.object_labels)
        if unknown_keys:
            raise ValidationError(
                f"label space {self.name!r}: label_map keys not in object_labels: {sorted(unknown_keys)}"
            )

    def canonical(self, label: str) -> str:
        return self.aliases.get(label, label)

    def is_unlabeled(self, label: str | None) -> bool:
        return label is None or label.strip().lower() in UNLABELED_SENTINELS

    @classmethod
    def from_dict(cls, doc: dict, name: str | None = None) -> "LabelSpace":
        try:
            label_map = {
                src: tuple([tgt] if isinstance(tgt, str) else tgt)
                for src, tgt in doc.get("label_map", {}).items()
            }
            return cls(
                name=name or doc.get("name", "unnamed"),
                object_labels=tuple(doc["object_labels"]),
                room_labels=tuple(doc["room_labels"]),
                rejected=frozenset(doc.get("rejected", [])),
                aliases=dict(doc.get("aliases", {})),
                label_map=label_map,
                outdoor_room_labels=tuple(doc.get("outdoor_room_labels", DEFAULT_OUTDOOR_ROOM_LABELS)),
            )
        except KeyError as exc:
            raise ParseError(f"label space document missing required field {exc}") from exc

    @classmethod
    def from_file(cls, path: str | Path) -> "LabelSpace":
        path = Path(path)
        try:
            doc = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ParseError(f"{path}: invalid JSON at line {exc.lineno} col {exc.colno}: {exc.msg}") from exc
        return cls.from_dict(doc, name=doc.get("name", path.stem))

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "object_labels": list(self.object_labels),
            "room_labels": list(self.room_labels),
            "rejected": sorted(self.rejected),
            "aliases": dict(self.aliases),
            "label_map": {k: list(v) for k, v in self.label_map.items()},
            "outdoor_room_labels": list(self.outdoor_room_labels),
        }


@dataclass(frozen=True)
class ObjectNode:
    id: str
    label: str
    room_id: str
    position: Vec3
    bbox_min: Vec3
    bbox_max: Vec3


@dataclass(frozen=True)
class RoomNode:
    id: str
    label: str | None
    building_id: str
    bbox_min: Vec3
    bbox_max: Vec3
    object_ids: tuple[str, ...] = ()

    def contains(self, point: Vec3) -> bool:
        return check_inside(point, self.bbox_min, self.bbox_max)


@dataclass(frozen=True)
class RoomView:
    """The slice of a room that classifiers consume: its object labels.

    object_labels preserves multiplicity and insertion order; classifiers
    that work on distinct labels deduplicate themselves.
    """

    room_id: str
    label: str | None
    object_labels: tuple[str, ...]
    building_id: str = ""

    @property
    def distinct_labels(self) -> tuple[str, ...]:
        return tuple(dict.fromkeys(self.object_labels))


@dataclass(frozen=True)
class SceneGraph:
    label_space: LabelSpace
    rooms: dict[str, RoomNode]
    objects: dict[str, ObjectNode]

    @property
    def buildings(self) -> tuple[str, ...]:
        return tuple(dict.fromkeys(r.building_id for r in self.rooms.values()))

    def objects_in(self, room_id: str) -> list[ObjectNode]:
        return [self.objects[oid] for oid in self.rooms[room_id].object_ids]

    def room_view(self, room_id: str) -> RoomView:
        room = self.rooms[room_id]
        return RoomView(
            room_id=room.id,
            label=room.label,
            object_labels=tuple(self.objects[oid].label for oid in room.object_ids),
            building_id=room.building_id,
        )

    def room_views(self) -> list[RoomView]:
        return [self.room_view(rid) for rid in self.rooms]

    @classmethod
    def build(cls, space: LabelSpace, rooms: list[RoomNode], objects: list[ObjectNode]) -> "SceneGraph":
        """Assemble a graph, wiring room.object_ids from object.room_id."""
        by_room: dict[str, list[str]] = {r.id: [] for r in rooms}
        for obj in objects:
            if obj.room_id not in by_room:
                raise ValidationError(f"object {obj.id!r} references nonexistent room {obj.room_id!r}")
            by_room[obj.room_id].append(obj.id)
        room_map = {r.id: replace(r, object_ids=tuple(by_room[r.id])) for r in rooms}
        return cls(label_space=space, rooms=room_map, objects={o.id: o for o in objects})

    def to_document(self) -> dict:
        return {
            "label_space": self.label_space.name,
            "rooms": [
                {
                    "id": r.id,
                    "label": r.label,
                    "building": r.building_id,
                    "bbox_min": list(r.bbox_min),
                    "bbox_max": list(r.bbox_max),
                }
                for r in self.rooms.values()
            ],
            "objects": [
                {
                    "id": o.id,
                    "label": o.label,
                    "room_id": o.room_id,
                    "position": list(o.position),
                    "bbox_min": list(o.bbox_min),
                    "bbox_max": list(o.bbox_max),
                }
                for o in self.objects.values()
            ],
        }


# ---------------------------------------------------------------------------
# Reports


@dataclass
class LoadReport:
    n_rooms: int = 0
    n_objects: int = 0
    unknown_object_labels: Counter = field(default_factory=Counter)
    alias_corrections: int = 0

    def to_dict(self) -> dict:
        return {
            "n_rooms": self.n_rooms,
            "n_objects": self.n_objects,
            "unknown_object_labels": dict(sorted(self.unknown_object_labels.items())),
            "alias_corrections": self.alias_corrections,
        }


@dataclass
class RemovalReport:
    rejected_objects: Counter = field(default_factory=Counter)
    removed_rooms: list[tuple[str, str]] = field(default_factory=list)  # (room_id, reason)
    objects_dropped_with_rooms: int = 0

    @property
    def n_rejected_objects(self) -> int:
        return sum(self.rejected_objects.values())

    def to_dict(self) -> dict:
        return {
            "rejected_objects": dict(sorted(self.rejected_objects.items())),
            "n_rejected_objects": self.n_rejected_objects,
            "removed_rooms": [list(t) for t in self.removed_rooms],
            "objects_dropped_with_rooms": self.objects_dropped_with_rooms,
        }


@dataclass
class ReassignReport:
    moved: list[tuple[str, str, str]] = field(default_factory=list)  # (object_id, from, to)
    unplaced: list[str] = field(default_factory=list)  # object ids outside every room box

    def to_dict(self) -> dict:
        return {"moved": [list(t) for t in self.moved], "unplaced": list(self.unplaced)}


@dataclass
class RemapReport:
    unmapped: Counter = field(default_factory=Counter)
    dropped_rejected: Counter = field(default_factory=Counter)
    remapped: int = 0

    def to_dict(self) -> dict:
        return {
            "unmapped": dict(sorted(self.unmapped.items())),
            "dropped_rejected": dict(sorted(self.dropped_rejected.items())),
            "remapped": self.remapped,
        }


# ---------------------------------------------------------------------------
# Loading and saving


def _require(record: dict, key: str, where: str):
    if key not in record:
        raise ParseError(f"{where}: missing field {key!r}")
    return record[key]


def load_scene_graph(document: dict | str | Path, space: LabelSpace) -> tuple[SceneGraph, LoadReport]:
    """Parse and validate a scene-graph document (dict, JSON text, or path).

    Object labels are alias-corrected against the label space; labels that
    are neither known, rejected, nor unlabeled are kept but counted in the
    load report. Structural problems (duplicate ids, dangling room
    references, inverted boxes, room labels outside the space) raise.
    """
    if isinstance(document, (str, Path)):
        path = Path(document)
        if path.exists() or isinstance(document, Path):
            try:
                text = path.read_text()
            except OSError as exc:
                raise ParseError(f"cannot read scene graph {path}: {exc}") from exc
        else:
            text = str(document)
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ParseError(f"scene graph: invalid JSON at line {exc.lineno} col {exc.colno}: {exc.msg}") from exc
    else:
        doc = document

    if not isinstance(doc, dict):
        raise ParseError("scene graph document must be a JSON object")

    report = LoadReport()
    valid_room_labels = set(space.room_labels) | set(space.outdoor_room_labels)

    rooms: list[RoomNode] = []
    seen_rooms: set[str] = set()
    for i, rec in enumerate(doc.get("rooms", [])):
        where = f"rooms[{i}]"
        rid = str(_require(rec, "id", where))
        if rid in seen_rooms:
            raise ValidationError(f"{where}: duplicate room id {rid!r}")
        seen_rooms.add(rid)
        label = rec.get("label")
        if label is not None:
            label = str(label)
            if label not in valid_room_labels and not space.is_unlabeled(label):
                raise ValidationError(f"{where}: room label {label!r} not in label space {space.name!r}")
        bbox_min = check_vec3(_require(rec, "bbox_min", where), f"{where}.bbox_min")
        bbox_max = check_vec3(_require(rec, "bbox_max", where), f"{where}.bbox_max")
        check_bbox(bbox_min, bbox_max, where)
        rooms.append(
            RoomNode(
                id=rid,
                label=label,
                building_id=str(_require(rec, "building", where)),
                bbox_min=bbox_min,
                bbox_max=bbox_max,
            )
        )

    objects: list[ObjectNode] = []
    seen_objects: set[str] = set()
    known = set(space.object_labels)
    for i, rec in enumerate(doc.get("objects", [])):
        where = f"objects[{i}]"
        oid = str(_require(rec, "id", where))
        if oid in seen_objects:
            raise ValidationError(f"{where}: duplicate object id {oid!r}")
        seen_objects.add(oid)
        raw_label = str(_require(rec, "label", where))
        label = space.canonical(raw_label)
        if label != raw_label:
            report.alias_corrections += 1
        if label not in known and label not in space.rejected and not space.is_unlabeled(label):
            report.unknown_object_labels[label] += 1
        position = check_vec3(_require(rec, "position", where), f"{where}.position")
        bbox_min = check_vec3(_require(rec, "bbox_min", where), f"{where}.bbox_min")
        bbox_max = check_vec3(_require(rec, "bbox_max", where), f"{where}.bbox_max")
        check_bbox(bbox_min, bbox_max, where)
        if not check_inside(position, bbox_min, bbox_max):
            raise ValidationError(f"{where}: position {position} outside own bounding box")
        objects.append(
            ObjectNode(
                id=oid,
                label=label,
                room_id=str(_require(rec, "room_id", where)),
                position=position,
                bbox_min=bbox_min,
                bbox_max=bbox_max,
            )
        )

    graph = SceneGraph.build(space, rooms, objects)
    report.n_rooms = len(graph.rooms)
    report.n_objects = len(graph.objects)
    return graph, report


def save_scene_graph(graph: SceneGraph, path: str | Path) -> None:
    Path(path).write_text(json.dumps(graph.to_document(), indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# Preprocessing operations


def filter_objects(graph: SceneGraph) -> tuple[SceneGraph, RemovalReport]:
    """Drop rejected/unlabeled objects, then drop non-room and emptied rooms.

    Rooms labeled with an unlabeled sentinel or an outdoor label are
    removed together with their remaining objects. Unknown object labels
    are kept: novel objects are legitimate at inference time.
    """
    space = graph.label_space
    report = RemovalReport()

    kept_objects: list[ObjectNode] = []
    for obj in graph.objects.values():
        if obj.label in space.rejected or space.is_unlabeled(obj.label):
            report.rejected_objects[obj.label] += 1
        else:
            kept_objects.append(obj)

    occupancy = Counter(o.room_id for o in kept_objects)
    outdoor = set(space.outdoor_room_labels)
    kept_rooms: list[RoomNode] = []
    removed_room_ids: set[str] = set()
    for room in graph.rooms.values():
        if room.label in outdoor:
            reason = "outdoor"
        elif room.label is not None and space.is_unlabeled(room.label):
            reason = "unlabeled"
        elif occupancy[room.id] == 0:
            reason = "empty"
        else:
            kept_rooms.append(room)
            continue
        report.removed_rooms.append((room.id, reason))
        removed_room_ids.add(room.id)

    final_objects = [o for o in kept_objects if o.room_id not in removed_room_ids]
    report.objects_dropped_with_rooms = len(kept_objects) - len(final_objects)
    return SceneGraph.build(space, kept_rooms, final_objects), report


def reassign_objects(graph: SceneGraph) -> tuple[SceneGraph, ReassignReport]:
    """Move objects whose center lies outside their room's bounding box.

    A misplaced object goes to the first containing room in ascending room
    id order; if no room contains it, it stays put and is flagged.
    """
    report = ReassignReport()
    rooms_sorted = sorted(graph.rooms.values(), key=lambda r: r.id)
    moved_objects: list[ObjectNode] = []
    for obj in graph.objects.values():
        home = graph.rooms[obj.room_id]
        if home.contains(obj.position):
            moved_objects.append(obj)
            continue
        target = next((r for r in rooms_sorted if r.contains(obj.position)), None)
        if target is None:
            report.unplaced.append(obj.id)
            moved_objects.append(obj)
        else:
            report.moved.append((obj.id, obj.room_id, target.id))
            moved_objects.append(replace(obj, room_id=target.id))
    return SceneGraph.build(graph.label_space, list(graph.rooms.values()), moved_objects), report


def remap_label_space(graph: SceneGraph, target: LabelSpace) -> tuple[SceneGraph, RemapReport]:
    """Replace object labels via the source space's label_map into target.

    When a source label maps to several target labels, the first one not
    rejected in the target space wins. Objects with no mapping, or whose
    candidates are all rejected, are dropped and reported.
    """
    source = graph.label_space
    if not source.label_map:
        raise ValidationError(f"label space {source.name!r} defines no label_map")
    report = RemapReport()
    kept: list[ObjectNode] = []
    for obj in graph.objects.values():
        candidates = source.label_map.get(obj.label)
        if candidates is None:
            report.unmapped[obj.label] += 1
            continue
        chosen = next((c for c in candidates if c not in target.rejected), None)
        if chosen is None:
            report.dropped_rejected[obj.label] += 1
            continue
        if chosen != obj.label:
            report.remapped += 1
        kept.append(replace(obj, label=chosen))
    return SceneGraph.build(target, list(graph.rooms.values()), kept), report


def preprocess(
    graph: SceneGraph, target: LabelSpace | None = None
) -> tuple[SceneGraph, dict]:
    """Standard chain: filter, reassign, optionally remap, re-filter empties.

    Returns the processed graph and a combined report dict.
    """
    graph, removal = filter_objects(graph)
    graph, reassign = reassign_objects(graph)
    combined = {"filter": removal.to_dict(), "reassign": reassign.to_dict()}
    if target is not None:
        graph, remap = remap_label_space(graph, target)
        graph, sweep = filter_objects(graph)
        combined["remap"] = remap.to_dict()
        combined["post_remap_filter"] = sweep.to_dict()
    combined["final"] = {"n_rooms": len(graph.rooms), "n_objects": len(graph.objects)}
    return graph, combined
