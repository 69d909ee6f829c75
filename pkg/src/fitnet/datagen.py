"""Seeded synthetic travel corpus with planted itinerary-dependent intent.

World model
-----------
Items live on a (city x category) grid. Categories play fixed roles: two
transport modes, a connecting-transfer ticket, hotels, then the remainder is
split between tourism products and local (non-tourism) services.

Each user resides in one city and has a different home city. A trip either
visits relatives (terminal city = home) or goes sightseeing (terminal city is
neither home nor residence). The itinerary is assembled from legs, in
creation order (transport is booked as a round trip, accommodation last)::

    [transfer to a transit city]  outbound to terminal  [return to residence]  [hotel in terminal]

Users hold a few interests in each category group; one of them is active on
a given trip. Browsing done in the terminal city follows the active interest,
browsing elsewhere follows any of the user's interests.

Planted rules, re-derivable from the emitted records alone:

* the terminal city is the destination of the last order that does not go
  back to the residence city;
* label_intent = 1 (sightseeing) iff terminal != home city;
* ground-truth clicks are all in the terminal city, in tourism categories for
  sightseeing users and local-service categories otherwise; transit and
  residence cities are never clicked;
* behaviour sequences follow the user's interests, with a fraction of
  uniformly random items as noise; no behaviour item is ever a ground-truth
  click.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigurationError
from .features import Item, RawOrder, TrainingInstance, write_instances, write_items

TRANSPORT = (0, 1)
TRANSFER = 2
HOTEL = 3
LEG_KINDS = ("transit", "stay", "return")


@dataclass(frozen=True)
class GenConfig:
    n_users: int = 2000
    n_items: int = 5000
    n_cities: int = 50
    n_categories: int = 12
    itinerary_length_probs: tuple[float, ...] = (0.47, 0.37, 0.11, 0.05)
    leg_weights: tuple[float, float, float] = (0.45, 0.4, 0.15)
    behavior_length: tuple[int, int] = (0, 8)
    click_noise: float = 0.1
    behavior_destination_rate: float = 0.3
    interests_per_group: int = 2
    clicks_per_user: tuple[int, int] = (3, 5)
    visiting_relatives_rate: float = 0.3
    preferred_click_rate: float = 0.75
    popularity_sigma: float = 1.0
    relatives_hotel_rate: float = 0.0
    test_fraction: float = 0.2
    seed: int = 7

    def __post_init__(self):
        for name in ("n_users", "n_items", "n_cities"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{name} must be >= 1")
        if self.n_categories < 6:
            raise ConfigurationError("n_categories must be >= 6 (transport, transfer, hotel, tourism, local)")
        if self.n_cities < 4:
            raise ConfigurationError("n_cities must be >= 4 (residence, home, transit, destination)")
        probs = np.asarray(self.itinerary_length_probs, dtype=float)
        if probs.size < 1 or probs.size > 4 or np.any(probs < 0) or abs(probs.sum() - 1.0) > 1e-9:
            raise ConfigurationError("itinerary_length_probs must be 1..4 nonnegative values summing to 1")
        lw = np.asarray(self.leg_weights, dtype=float)
        if lw.shape != (3,) or np.any(lw <= 0):
            raise ConfigurationError("leg_weights must be three positive weights")
        lo, hi = self.behavior_length
        if self.popularity_sigma < 0:
            raise ConfigurationError("popularity_sigma must be >= 0")
        if lo < 0 or hi < lo:
            raise ConfigurationError("behavior_length must satisfy 0 <= min <= max")
        if self.interests_per_group < 1:
            raise ConfigurationError("interests_per_group must be >= 1")
        clo, chi = self.clicks_per_user
        if clo < 1 or chi < clo:
            raise ConfigurationError("clicks_per_user must satisfy 1 <= min <= max")
        for name in ("click_noise", "behavior_destination_rate", "visiting_relatives_rate",
                     "preferred_click_rate", "test_fraction", "relatives_hotel_rate"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ConfigurationError(f"{name} must lie in [0, 1]")
        min_cell = self.n_items // (self.n_cities * self.n_categories)
        if min_cell < 1:
            raise ConfigurationError(
                f"{self.n_items} items cannot cover {self.n_cities} cities x {self.n_categories} categories"
            )

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}

    @classmethod
    def from_dict(cls, d) -> GenConfig:
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigurationError(f"unknown data config keys: {sorted(unknown)}")
        return cls(**{k: tuple(v) if isinstance(v, list) else v for k, v in d.items()})


def category_names(n_categories: int) -> list[str]:
    names = ["flight", "train", "transfer", "hotel"]
    rest = n_categories - 4
    n_tour = (rest + 1) // 2
    names += [f"tour{i:02d}" for i in range(n_tour)]
    names += [f"local{i:02d}" for i in range(rest - n_tour)]
    return names


def tourism_categories(n_categories: int) -> list[int]:
    return [i for i, n in enumerate(category_names(n_categories)) if n.startswith("tour")]


def local_categories(n_categories: int) -> list[int]:
    return [i for i, n in enumerate(category_names(n_categories)) if n.startswith("local")]


def city_name(c: int) -> str:
    return f"city{c:03d}"


@dataclass
class World:
    items: list[Item]
    city_of: np.ndarray
    cat_of: np.ndarray
    popularity: np.ndarray
    cells: dict[tuple[int, int], np.ndarray]


def build_world(config: GenConfig) -> World:
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, 0]))
    idx = np.arange(config.n_items)
    city_of = idx % config.n_cities
    cat_of = (idx // config.n_cities) % config.n_categories
    popularity = rng.lognormal(0.0, config.popularity_sigma, size=config.n_items)
    names = category_names(config.n_categories)
    items = [Item(f"item{i:05d}", names[cat_of[i]], city_name(city_of[i])) for i in idx]
    cells: dict[tuple[int, int], list[int]] = {}
    for i in idx:
        cells.setdefault((int(city_of[i]), int(cat_of[i])), []).append(int(i))
    return World(items, city_of, cat_of, popularity, {k: np.array(v) for k, v in cells.items()})


def _pick(rng, world: World, city: int, cat: int, exclude=()) -> int | None:
    cell = world.cells.get((city, cat))
    if cell is None:
        return None
    if exclude:
        cell = cell[~np.isin(cell, list(exclude))]
    if cell.size == 0:
        return None
    w = world.popularity[cell]
    return int(rng.choice(cell, p=w / w.sum()))


def _other_city(rng, n_cities: int, avoid: set[int]) -> int:
    choices = [c for c in range(n_cities) if c not in avoid]
    return int(rng.choice(choices))


@dataclass
class SyntheticUser:
    instance: TrainingInstance  # target left empty
    clicks: list[int]
    terminal_city: int
    transit_cities: list[int]


def generate_user(config: GenConfig, world: World, index: int) -> SyntheticUser:
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, 1, index]))
    n_c = config.n_cities
    tour = tourism_categories(config.n_categories)
    local = local_categories(config.n_categories)

    gender = str(rng.choice(["f", "m"]))
    age = int(rng.integers(1, 7))
    reside = int(rng.integers(n_c))
    home = _other_city(rng, n_c, {reside})
    # age shifts which tourism product a user prefers; the rest is idiosyncratic
    n_tour, n_local = min(config.interests_per_group, len(tour)), min(config.interests_per_group, len(local))
    first = tour[age % len(tour)] if rng.random() < 0.5 else int(rng.choice(tour))
    tour_interests = [first] + [int(c) for c in rng.permutation([t for t in tour if t != first])[: n_tour - 1]]
    local_interests = [int(c) for c in rng.permutation(local)[:n_local]]

    visiting = rng.random() < config.visiting_relatives_rate
    terminal = home if visiting else _other_city(rng, n_c, {reside, home})
    intent = 0 if visiting else 1

    probs = np.asarray(config.itinerary_length_probs, dtype=float)
    length = int(rng.choice(np.arange(1, probs.size + 1), p=probs / probs.sum()))
    legs: list[tuple[str, int, int]] = []  # (kind, city, category)
    if length == 1:
        if rng.random() < 0.6:
            legs.append(("outbound", terminal, int(rng.choice(TRANSPORT))))
        else:
            legs.append(("stay", terminal, HOTEL))
    else:
        w = np.asarray(config.leg_weights, dtype=float)
        kinds = set(rng.choice(LEG_KINDS, size=length - 1, replace=False, p=w / w.sum()).tolist())
        transit_city = None
        if "transit" in kinds:
            transit_city = _other_city(rng, n_c, {reside, home, terminal})
            legs.append(("transit", transit_city, TRANSFER))
        legs.append(("outbound", terminal, int(rng.choice(TRANSPORT))))
        if "return" in kinds:
            legs.append(("return", reside, int(rng.choice(TRANSPORT))))
        if "stay" in kinds:
            legs.append(("stay", terminal, HOTEL))

    if visiting:
        # people staying with family rarely book a hotel; their stay leg is a local ticket
        legs = [
            (k, c, TRANSPORT[1]) if k == "stay" and rng.random() >= config.relatives_hotel_rate else (k, c, cat)
            for k, c, cat in legs
        ]

    orders = []
    for kind, city, cat in legs:
        it = world.items[_pick(rng, world, city, cat)]
        label = intent if kind in ("outbound", "stay") else 0
        orders.append(RawOrder(it.item_id, it.category_id, it.dest_city_id, label))

    allowed = tour if intent else local
    interests = tour_interests + local_interests
    preferred = int(rng.choice(tour_interests if intent else local_interests))

    lo, hi = config.behavior_length
    behavior_idx: list[int] = []
    for _ in range(int(rng.integers(lo, hi + 1))):
        if rng.random() < config.click_noise:
            behavior_idx.append(int(rng.integers(config.n_items)))
        elif rng.random() < config.behavior_destination_rate:
            behavior_idx.append(_pick(rng, world, terminal, preferred))
        else:
            behavior_idx.append(_pick(rng, world, int(rng.integers(n_c)), int(rng.choice(interests))))
    taken = set(behavior_idx)
    clicks: list[int] = []
    n_clicks = int(rng.integers(config.clicks_per_user[0], config.clicks_per_user[1] + 1))
    attempts = 0
    while len(clicks) < n_clicks and attempts < 50 * n_clicks:
        attempts += 1
        cat = preferred if rng.random() < config.preferred_click_rate else int(rng.choice(allowed))
        pick = _pick(rng, world, terminal, cat, exclude=taken)
        if pick is None:
            continue
        clicks.append(pick)
        taken.add(pick)

    inst = TrainingInstance(
        user_id=f"u{index:05d}",
        profile={
            "gender": gender,
            "age_level": f"age{age}",
            "reside_city_id": city_name(reside),
            "home_city_id": city_name(home),
        },
        itinerary=tuple(orders),
        behavior=tuple(world.items[i] for i in behavior_idx),
        target=None,
        label_click=1,
        label_intent=intent,
    )
    transit = [c for k, c, _ in legs if k == "transit"]
    return SyntheticUser(inst, clicks, terminal, transit)


@dataclass
class Corpus:
    train: list[TrainingInstance]
    test: list[TrainingInstance]
    items: list[Item]
    config: GenConfig


def generate(config: GenConfig) -> Corpus:
    """Build the item pool and the train/test corpora (positives only).

    Users are split disjointly; each of a user's ground-truth clicks becomes
    one positive instance.
    """
    world = build_world(config)
    users = [generate_user(config, world, i) for i in range(config.n_users)]
    order = np.random.default_rng(np.random.SeedSequence([config.seed, 2])).permutation(config.n_users)
    n_test = int(round(config.test_fraction * config.n_users))
    test_users = set(order[:n_test].tolist())
    train, test = [], []
    for i, u in enumerate(users):
        dest = test if i in test_users else train
        for c in u.clicks:
            dest.append(u.instance.with_target(world.items[c], 1))
    return Corpus(train, test, world.items, config)


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def write_corpus(corpus: Corpus, directory: str | Path) -> dict:
    """Write ``train.jsonl``, ``test.jsonl``, ``items.jsonl`` and ``manifest.json``."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    write_instances(d / "train.jsonl", corpus.train)
    write_instances(d / "test.jsonl", corpus.test)
    write_items(d / "items.jsonl", corpus.items)
    files = {name: _sha256(d / name) for name in ("items.jsonl", "test.jsonl", "train.jsonl")}
    content = hashlib.sha256("".join(f"{k}:{v}\n" for k, v in files.items()).encode()).hexdigest()
    manifest = {
        "config": corpus.config.to_dict(),
        "counts": {
            "items": len(corpus.items),
            "train_instances": len(corpus.train),
            "test_instances": len(corpus.test),
            "train_users": len({i.user_id for i in corpus.train}),
            "test_users": len({i.user_id for i in corpus.test}),
        },
        "files": files,
        "content_hash": content,
    }
    (d / "manifest.json").write_text(json.dumps(manifest, sort_keys=True, indent=2) + "\n", encoding="utf-8")
    return manifest


def load_corpus(directory: str | Path) -> Corpus:
    from .features import read_instances, read_items

    d = Path(directory)
    manifest_path = d / "manifest.json"
    config = GenConfig()
    if manifest_path.exists():
        config = GenConfig.from_dict(json.loads(manifest_path.read_text(encoding="utf-8"))["config"])
    return Corpus(read_instances(d / "train.jsonl"), read_instances(d / "test.jsonl"), read_items(d / "items.jsonl"), config)


__all__ = ["GenConfig", "Corpus", "generate", "write_corpus", "load_corpus"]
