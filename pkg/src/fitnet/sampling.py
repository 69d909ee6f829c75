"""Negative sampling under the three composition settings."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ConfigurationError, StratumExhaustedError
from .features import Item, TrainingInstance

RATIOS = (1, 2, 5, 8, 10, 15)

# Retrieval is scored against the whole pool, so training needs negatives
# from outside the itinerary's cities too; settings 2 and 3 never supply them.
DEFAULT_SETTING = 1


class ItemPool:
    """Items with secondary indexes by destination city and by (city, category)."""

    def __init__(self, items: Sequence[Item]):
        self.items = list(items)
        self.position = {it.item_id: i for i, it in enumerate(self.items)}
        if len(self.position) != len(self.items):
            raise ConfigurationError("item pool contains duplicate item ids")
        self.city = np.array([it.dest_city_id for it in self.items], dtype=object)
        self.category = np.array([it.category_id for it in self.items], dtype=object)
        by_city: dict[str, list[int]] = {}
        by_city_cat: dict[tuple[str, str], list[int]] = {}
        for i, it in enumerate(self.items):
            by_city.setdefault(it.dest_city_id, []).append(i)
            by_city_cat.setdefault((it.dest_city_id, it.category_id), []).append(i)
        self.by_city = {k: np.array(v, dtype=np.int64) for k, v in by_city.items()}
        self.by_city_category = {k: np.array(v, dtype=np.int64) for k, v in by_city_cat.items()}

    def __len__(self) -> int:
        return len(self.items)

    def __getitem__(self, item_id: str) -> Item:
        return self.items[self.position[item_id]]

    def __contains__(self, item_id: str) -> bool:
        return item_id in self.position


@dataclass(frozen=True)
class SamplingPolicy:
    setting: int = DEFAULT_SETTING
    ratio: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.setting not in (1, 2, 3):
            raise ConfigurationError(f"sampling setting must be 1, 2 or 3, got {self.setting}")
        if self.ratio < 1:
            raise ConfigurationError(f"sampling ratio must be >= 1, got {self.ratio}")

    def same_category_count(self) -> int:
        if self.setting == 2:
            return self.ratio // 2
        if self.setting == 3:
            # half-up, so r=5 gives 1 (round() would give 0)
            return max(0, math.floor(0.1 * self.ratio + 0.5))
        return 0


def destination_cities(inst: TrainingInstance) -> list[str]:
    """Union of the itinerary's order destinations, in first-seen order."""
    seen: dict[str, None] = {}
    for o in inst.itinerary:
        seen.setdefault(o.dest_city_id, None)
    return list(seen)


def _draw(rng: np.random.Generator, candidates: np.ndarray, k: int, stratum: str) -> np.ndarray:
    if candidates.size < k:
        raise StratumExhaustedError(stratum, k, int(candidates.size))
    if k == 0:
        return candidates[:0]
    return rng.choice(candidates, size=k, replace=False)


def negative_positions(
    positive: TrainingInstance, pool: ItemPool, policy: SamplingPolicy, rng: np.random.Generator
) -> np.ndarray:
    """Pool positions of the negatives for ``positive`` (no duplicates, never the positive)."""
    if positive.target is None:
        raise ConfigurationError("a positive instance needs a target item")
    pos_id = positive.target.item_id
    pos_index = pool.position.get(pos_id, -1)
    r = policy.ratio
    if policy.setting == 1:
        n = len(pool)
        available = n - (1 if pos_index >= 0 else 0)
        if available < r:
            raise StratumExhaustedError("pool", r, available)
        # rejection is cheap: at most one excluded position
        picks = rng.choice(n - (1 if pos_index >= 0 else 0), size=r, replace=False)
        if pos_index >= 0:
            picks = picks + (picks >= pos_index)
        return picks.astype(np.int64)

    cities = destination_cities(positive)
    in_dest = [pool.by_city[c] for c in cities if c in pool.by_city]
    eligible = np.sort(np.concatenate(in_dest)) if in_dest else np.zeros(0, dtype=np.int64)
    eligible = eligible[eligible != pos_index]
    same_mask = pool.category[eligible] == positive.target.category_id
    k_same = policy.same_category_count()
    label = "/".join(cities)
    same = _draw(rng, eligible[same_mask], k_same, f"destination {label}, category {positive.target.category_id}")
    diff = _draw(rng, eligible[~same_mask], r - k_same, f"destination {label}, category != {positive.target.category_id}")
    return np.concatenate([same, diff])


def sample_negatives(
    positive: TrainingInstance,
    pool: ItemPool,
    policy: SamplingPolicy,
    rng: np.random.Generator | None = None,
) -> list[TrainingInstance]:
    """Negatives reuse the positive's user side and swap in a sampled target with label 0."""
    if rng is None:
        rng = np.random.default_rng(policy.seed)
    picks = negative_positions(positive, pool, policy, rng)
    return [positive.with_target(pool.items[int(p)], 0) for p in picks]


def positive_rng(policy: SamplingPolicy, epoch: int, index: int) -> np.random.Generator:
    """Independent stream per (epoch, positive) so sampling parallelises deterministically."""
    return np.random.default_rng(np.random.SeedSequence([policy.seed, epoch, index]))
