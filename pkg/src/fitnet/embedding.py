"""Embedding dictionaries and the four embedded views of an instance."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np

from . import tensor as T
from .errors import ConfigurationError
from .features import ITEM_FEATURES, PROFILE_FEATURES, EncodedInstance, Vocabulary

INIT_RANGE = 0.05

DEFAULT_DIMS = {
    "item_id": 32,
    "category_id": 8,
    "dest_city_id": 8,
    "reside_city_id": 8,
    "home_city_id": 8,
    "gender": 2,
    "age_level": 4,
}


@dataclass
class EmbeddingDictionary:
    feature_name: str
    matrix: T.Tensor

    @property
    def rows(self) -> int:
        return self.matrix.shape[0]

    @property
    def dim(self) -> int:
        return self.matrix.shape[1]


@dataclass
class EmbeddedInstance:
    """Dense views of one instance.

    The itinerary and behaviour lists are held as stacked matrices: row ``l``
    of ``e_I`` is the embedding of the l-th order. ``e_B`` is ``None`` when
    the behaviour sequence is empty.
    """

    e_P: T.Tensor
    e_I: T.Tensor
    e_B: T.Tensor | None
    e_F: T.Tensor | None


def feature_dim(dims: Mapping[str, int], key: str) -> int:
    short = key.split(".", 1)[1]
    if short not in dims:
        raise ConfigurationError(f"no embedding dimension configured for feature {short!r}")
    d = int(dims[short])
    if d <= 0:
        raise ConfigurationError(f"embedding dimension for {short!r} must be positive")
    return d


def group_dim(dims: Mapping[str, int], group: str) -> int:
    names = PROFILE_FEATURES if group == "profile" else ITEM_FEATURES
    return sum(feature_dim(dims, f"{group}.{n}") for n in names)


def init_dictionaries(
    vocabs: Mapping[str, Vocabulary], dims: Mapping[str, int], rng: np.random.Generator
) -> dict[str, EmbeddingDictionary]:
    out = {}
    for key in sorted(vocabs):
        d = feature_dim(dims, key)
        data = rng.uniform(-INIT_RANGE, INIT_RANGE, size=(vocabs[key].size, d))
        out[key] = EmbeddingDictionary(key, T.parameter(data, name=f"emb.{key}"))
    return out


def lookup(dictionary: EmbeddingDictionary, index) -> T.Tensor:
    """Rows of the dictionary for ``index`` (an int gives a single 1 x D row)."""
    return T.gather(dictionary.matrix, np.atleast_1d(index))


def _dict(dicts: Mapping[str, EmbeddingDictionary], key: str) -> EmbeddingDictionary:
    try:
        return dicts[key]
    except KeyError:
        raise ConfigurationError(f"missing embedding dictionary {key!r}") from None


def embed_items(group: str, indices: np.ndarray, dicts: Mapping[str, EmbeddingDictionary]) -> T.Tensor:
    """Embed an (n x 3) index array as an n x (sum of item feature dims) matrix."""
    parts = [lookup(_dict(dicts, f"{group}.{f}"), indices[:, j]) for j, f in enumerate(ITEM_FEATURES)]
    return T.concat(parts, axis=1)


def embed_profile(profile: np.ndarray, dicts: Mapping[str, EmbeddingDictionary]) -> T.Tensor:
    parts = [lookup(_dict(dicts, f"profile.{f}"), profile[j]) for j, f in enumerate(PROFILE_FEATURES)]
    return T.concat(parts, axis=1)


def embed_instance(
    enc: EncodedInstance,
    dicts: Mapping[str, EmbeddingDictionary],
    single_order: bool = False,
) -> EmbeddedInstance:
    itinerary = enc.itinerary[-1:] if single_order else enc.itinerary
    return EmbeddedInstance(
        e_P=embed_profile(enc.profile, dicts),
        e_I=embed_items("itinerary", itinerary, dicts),
        e_B=embed_items("behavior", enc.behavior, dicts) if len(enc.behavior) else None,
        e_F=None if enc.target is None else embed_items("target", enc.target[None, :], dicts),
    )
