"""Serving path: item-vector index and exact top-k inner-product search."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Protocol, Sequence

import numpy as np

from .errors import InvalidArgumentError, UnknownItemError
from .features import Item, TrainingInstance, encode_instance, encode_items
from .model import FitNet


class TopKIndex(Protocol):
    """Anything that answers top-k inner-product queries over item rows."""

    item_ids: list[str]

    def top_k(self, query: np.ndarray, k: int) -> list[tuple[str, float]]: ...


def inner_scores(matrix: np.ndarray, query: np.ndarray) -> np.ndarray:
    """Row-wise inner products, using the same reduction as :func:`fitnet.model.score`."""
    return np.sum(matrix * np.asarray(query, dtype=np.float64).reshape(1, -1), axis=1)


@dataclass
class RetrievalIndex:
    """Frozen item representations with an exact top-k search."""

    matrix: np.ndarray
    item_ids: list[str]
    fingerprint: str

    def __post_init__(self):
        if self.matrix.shape[0] != len(self.item_ids):
            raise InvalidArgumentError("index rows and item ids differ in length")
        self.matrix.setflags(write=False)
        # rank of each item id in ascending order, used for tie-breaking
        order = sorted(range(len(self.item_ids)), key=self.item_ids.__getitem__)
        self._id_rank = np.empty(len(order), dtype=np.int64)
        self._id_rank[order] = np.arange(len(order))

    def __len__(self) -> int:
        return len(self.item_ids)

    def scores(self, query: np.ndarray) -> np.ndarray:
        return inner_scores(self.matrix, query)

    def top_k(self, query: np.ndarray, k: int) -> list[tuple[str, float]]:
        """The k highest-scoring items, sorted by (score desc, item id asc)."""
        n = len(self.item_ids)
        if not 1 <= k <= n:
            raise InvalidArgumentError(f"k must lie in [1, {n}], got {k}")
        s = self.scores(query)
        if k < n:
            # every item scoring at least the k-th best, so ties at the cut are kept
            kth = np.partition(s, n - k)[n - k]
            cand = np.flatnonzero(s >= kth)
        else:
            cand = np.arange(n)
        ranked = cand[np.lexsort((self._id_rank[cand], -s[cand]))][:k]
        return [(self.item_ids[i], float(s[i])) for i in ranked]


def build_index(pool: Sequence[Item], model: FitNet, batch: int = 4096) -> RetrievalIndex:
    codes = encode_items(list(pool), model.vocabs)
    rows = [model.item_vectors(codes[i : i + batch]) for i in range(0, len(codes), batch)]
    matrix = np.concatenate(rows) if rows else np.zeros((0, model.config.repr_dim))
    fingerprint = model.checkpoint_hash or model.fingerprint()
    return RetrievalIndex(np.ascontiguousarray(matrix), [it.item_id for it in pool], fingerprint)


def user_vector(model: FitNet, user: TrainingInstance) -> np.ndarray:
    return model.user_vector(encode_instance(user.with_target(None), model.vocabs))


def retrieve_top_k(user: TrainingInstance, index: TopKIndex, k: int, model: FitNet) -> list[tuple[str, float]]:
    return index.top_k(user_vector(model, user), k)


def refresh_user(
    model: FitNet, user: TrainingInstance, new_click_events: Iterable[str], pool
) -> tuple[np.ndarray, TrainingInstance]:
    """Append clicked items to the behaviour sequence and recompute the user vector.

    ``pool`` maps item ids to items (an :class:`~fitnet.sampling.ItemPool` or dict).
    Returns the new vector and the updated user; the inputs are not modified.
    """
    added = []
    for item_id in new_click_events:
        try:
            added.append(pool[item_id])
        except KeyError:
            raise UnknownItemError(f"click event references unknown item {item_id!r}") from None
    updated = user.with_behavior([*user.behavior, *added])
    return user_vector(model, updated), updated
