"""Raw records, per-feature vocabularies and index-form encoding.

Each categorical feature is conceptually a sparse binary vector. Rather than
materialising those vectors, an encoded instance keeps the positions of the
nonzero entries: one index for a one-hot feature, one index per list member
for a multi-hot feature. Embedding lookup consumes the indices directly.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Mapping, Sequence

import numpy as np

from .errors import DataError

UNKNOWN = "<unk>"

PROFILE_FEATURES = ("gender", "age_level", "reside_city_id", "home_city_id")
ITEM_FEATURES = ("item_id", "category_id", "dest_city_id")
GROUPS = ("profile", "itinerary", "behavior", "target")


@dataclass(frozen=True)
class FeatureGroupSpec:
    category: str
    features: tuple[tuple[str, str], ...]


FEATURE_GROUPS: dict[str, FeatureGroupSpec] = {
    "profile": FeatureGroupSpec("profile", tuple((f, "one-hot") for f in PROFILE_FEATURES)),
    "itinerary": FeatureGroupSpec("itinerary", tuple((f, "multi-hot") for f in ITEM_FEATURES)),
    "behavior": FeatureGroupSpec("behavior", tuple((f, "multi-hot") for f in ITEM_FEATURES)),
    "target": FeatureGroupSpec("target", tuple((f, "one-hot") for f in ITEM_FEATURES)),
}


def feature_keys() -> list[str]:
    """Qualified names ``group.feature`` for every embedded feature, in a fixed order."""
    return [f"{g}.{name}" for g in GROUPS for name, _ in FEATURE_GROUPS[g].features]


@dataclass(frozen=True)
class Item:
    item_id: str
    category_id: str
    dest_city_id: str

    def to_dict(self) -> dict:
        return {"item_id": self.item_id, "category_id": self.category_id, "dest_city_id": self.dest_city_id}

    @classmethod
    def from_dict(cls, d: Mapping) -> Item:
        return cls(str(d["item_id"]), str(d["category_id"]), str(d["dest_city_id"]))


@dataclass(frozen=True)
class RawOrder:
    item_id: str
    category_id: str
    dest_city_id: str
    intent_label: int | None = None

    def to_dict(self) -> dict:
        d = {"item_id": self.item_id, "category_id": self.category_id, "dest_city_id": self.dest_city_id}
        if self.intent_label is not None:
            d["intent_label"] = self.intent_label
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> RawOrder:
        label = d.get("intent_label")
        return cls(
            str(d["item_id"]),
            str(d["category_id"]),
            str(d["dest_city_id"]),
            None if label is None else int(label),
        )


@dataclass(frozen=True)
class TrainingInstance:
    """The (profile, itinerary, behaviour, target) quadruple with its two labels.

    ``target`` may be ``None`` for a serving-time user query.
    """

    user_id: str
    profile: Mapping[str, str]
    itinerary: tuple[RawOrder, ...]
    behavior: tuple[Item, ...]
    target: Item | None
    label_click: int = 1
    label_intent: int = 0

    def __post_init__(self):
        if not self.itinerary:
            raise DataError(f"user {self.user_id}: itinerary must be non-empty")
        if self.label_click not in (0, 1) or self.label_intent not in (0, 1):
            raise DataError(f"user {self.user_id}: labels must be 0 or 1")

    def with_target(self, target: Item | None, label_click: int | None = None) -> TrainingInstance:
        return TrainingInstance(
            self.user_id,
            self.profile,
            self.itinerary,
            self.behavior,
            target,
            self.label_click if label_click is None else label_click,
            self.label_intent,
        )

    def with_behavior(self, behavior: Sequence[Item]) -> TrainingInstance:
        return TrainingInstance(
            self.user_id, self.profile, self.itinerary, tuple(behavior),
            self.target, self.label_click, self.label_intent,
        )

    def to_dict(self) -> dict:
        return {
            "user_id": self.user_id,
            "profile": {k: self.profile[k] for k in PROFILE_FEATURES},
            "itinerary": [o.to_dict() for o in self.itinerary],
            "behavior": [b.to_dict() for b in self.behavior],
            "target": None if self.target is None else self.target.to_dict(),
            "label_click": self.label_click,
            "label_intent": self.label_intent,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> TrainingInstance:
        try:
            _check_timestamps(d)
            return cls(
                user_id=str(d["user_id"]),
                profile={k: str(d["profile"][k]) for k in PROFILE_FEATURES},
                itinerary=tuple(RawOrder.from_dict(o) for o in d["itinerary"]),
                behavior=tuple(Item.from_dict(b) for b in d.get("behavior", ())),
                target=None if d.get("target") is None else Item.from_dict(d["target"]),
                label_click=int(d.get("label_click", 1)),
                label_intent=int(d.get("label_intent", 0)),
            )
        except (KeyError, TypeError) as exc:
            raise DataError(f"malformed instance record: missing or invalid field {exc}") from None


def _check_timestamps(d: Mapping) -> None:
    """Behaviour must precede itinerary creation when both carry ``ts`` fields."""
    b_ts = [b["ts"] for b in d.get("behavior", ()) if "ts" in b]
    o_ts = [o["ts"] for o in d.get("itinerary", ()) if "ts" in o]
    if b_ts and o_ts and max(b_ts) >= min(o_ts):
        raise DataError(
            f"user {d.get('user_id')}: behaviour event at ts={max(b_ts)} does not precede "
            f"itinerary creation at ts={min(o_ts)}"
        )


@dataclass
class Vocabulary:
    feature_name: str
    values: list[str] = field(default_factory=lambda: [UNKNOWN])

    def __post_init__(self):
        if not self.values or self.values[0] != UNKNOWN:
            raise DataError(f"vocabulary {self.feature_name}: index 0 must be {UNKNOWN!r}")
        self.index = {v: i for i, v in enumerate(self.values)}
        if len(self.index) != len(self.values):
            raise DataError(f"vocabulary {self.feature_name}: duplicate values")

    @property
    def size(self) -> int:
        return len(self.values)

    def encode(self, value: str) -> int:
        return self.index.get(value, 0)

    def decode(self, index: int) -> str:
        return self.values[index]

    def write(self, path: str | Path) -> None:
        lines = [self.feature_name, *self.values]
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")

    @classmethod
    def read(cls, path: str | Path) -> Vocabulary:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        if len(lines) < 2:
            raise DataError(f"{path}: vocabulary file needs a name line and at least one value")
        return cls(lines[0], lines[1:])


def _item_values(group: str, inst: TrainingInstance) -> Iterator[tuple[str, str]]:
    if group == "profile":
        for f in PROFILE_FEATURES:
            yield f, inst.profile[f]
    elif group == "itinerary":
        for o in inst.itinerary:
            yield from (("item_id", o.item_id), ("category_id", o.category_id), ("dest_city_id", o.dest_city_id))
    elif group == "behavior":
        for b in inst.behavior:
            yield from (("item_id", b.item_id), ("category_id", b.category_id), ("dest_city_id", b.dest_city_id))
    elif inst.target is not None:
        t = inst.target
        yield from (("item_id", t.item_id), ("category_id", t.category_id), ("dest_city_id", t.dest_city_id))


def build_vocabularies(
    corpus: Iterable[TrainingInstance], items: Iterable[Item] = ()
) -> dict[str, Vocabulary]:
    """Index every value seen in ``corpus``, one vocabulary per ``group.feature``.

    Values are inserted in sorted order after the reserved unknown slot, so
    rebuilding on the same corpus is deterministic. ``items`` (typically the
    serving pool) are registered in the target-side vocabularies so that
    every poolable item has its own row even if it was never a training target.
    """
    seen: dict[str, set[str]] = {k: set() for k in feature_keys()}
    count = 0
    for inst in corpus:
        count += 1
        for group in GROUPS:
            for f, v in _item_values(group, inst):
                seen[f"{group}.{f}"].add(v)
    if count == 0:
        raise DataError("cannot build vocabularies from an empty corpus")
    for it in items:
        seen["target.item_id"].add(it.item_id)
        seen["target.category_id"].add(it.category_id)
        seen["target.dest_city_id"].add(it.dest_city_id)
    return {k: Vocabulary(k, [UNKNOWN, *sorted(v - {UNKNOWN})]) for k, v in seen.items()}


@dataclass(frozen=True)
class EncodedInstance:
    """Index form of an instance.

    ``profile`` holds one index per profile feature; ``itinerary`` and
    ``behavior`` are (length x 3) arrays of (item, category, city) indices;
    ``target`` is a length-3 array or ``None``.
    """

    profile: np.ndarray
    itinerary: np.ndarray
    behavior: np.ndarray
    target: np.ndarray | None
    label_click: int
    label_intent: int


def _encode_items(group: str, items: Sequence, vocabs: Mapping[str, Vocabulary]) -> np.ndarray:
    vs = [vocabs[f"{group}.{f}"] for f in ITEM_FEATURES]
    out = np.zeros((len(items), 3), dtype=np.int64)
    for r, it in enumerate(items):
        out[r, 0] = vs[0].encode(it.item_id)
        out[r, 1] = vs[1].encode(it.category_id)
        out[r, 2] = vs[2].encode(it.dest_city_id)
    return out


def encode_item(item: Item, vocabs: Mapping[str, Vocabulary]) -> np.ndarray:
    return _encode_items("target", [item], vocabs)[0]


def encode_items(items: Sequence[Item], vocabs: Mapping[str, Vocabulary]) -> np.ndarray:
    return _encode_items("target", items, vocabs)


def encode_instance(inst: TrainingInstance, vocabs: Mapping[str, Vocabulary]) -> EncodedInstance:
    profile = np.array(
        [vocabs[f"profile.{f}"].encode(inst.profile[f]) for f in PROFILE_FEATURES], dtype=np.int64
    )
    return EncodedInstance(
        profile=profile,
        itinerary=_encode_items("itinerary", inst.itinerary, vocabs),
        behavior=_encode_items("behavior", inst.behavior, vocabs),
        target=None if inst.target is None else encode_item(inst.target, vocabs),
        label_click=inst.label_click,
        label_intent=inst.label_intent,
    )


def decode_instance(enc: EncodedInstance, vocabs: Mapping[str, Vocabulary]) -> dict:
    """Map indices back to raw values (unknowns decode to the reserved token)."""

    def rows(group, arr):
        return [
            tuple(vocabs[f"{group}.{f}"].decode(int(i)) for f, i in zip(ITEM_FEATURES, row))
            for row in arr
        ]

    return {
        "profile": {f: vocabs[f"profile.{f}"].decode(int(i)) for f, i in zip(PROFILE_FEATURES, enc.profile)},
        "itinerary": rows("itinerary", enc.itinerary),
        "behavior": rows("behavior", enc.behavior),
        "target": None if enc.target is None else rows("target", [enc.target])[0],
    }


# --------------------------------------------------------------------------
# corpus files
# --------------------------------------------------------------------------


def dumps_record(obj: Mapping) -> str:
    return json.dumps(obj, sort_keys=True, ensure_ascii=False, separators=(",", ":"))


def write_instances(path: str | Path, instances: Iterable[TrainingInstance]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for inst in instances:
            fh.write(dumps_record(inst.to_dict()))
            fh.write("\n")


def read_instances(path: str | Path) -> list[TrainingInstance]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}:{lineno}: invalid record ({exc.msg})") from None
            try:
                out.append(TrainingInstance.from_dict(rec))
            except DataError as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from None
    return out


def write_items(path: str | Path, items: Iterable[Item]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for it in items:
            fh.write(dumps_record(it.to_dict()))
            fh.write("\n")


def read_items(path: str | Path) -> list[Item]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                out.append(Item.from_dict(json.loads(line)))
            except (json.JSONDecodeError, KeyError) as exc:
                raise DataError(f"{path}:{lineno}: invalid item record ({exc})") from None
    return out


def write_vocabularies(directory: str | Path, vocabs: Mapping[str, Vocabulary]) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    for name, v in vocabs.items():
        v.write(d / f"{name}.txt")


def read_vocabularies(directory: str | Path) -> dict[str, Vocabulary]:
    out = {}
    for p in sorted(Path(directory).glob("*.txt")):
        v = Vocabulary.read(p)
        out[v.feature_name] = v
    return out
