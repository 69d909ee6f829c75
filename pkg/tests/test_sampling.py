import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fitnet.datagen import GenConfig, generate
from fitnet.errors import ConfigurationError, StratumExhaustedError
from fitnet.features import Item, RawOrder, TrainingInstance
from fitnet.sampling import (
    RATIOS,
    ItemPool,
    SamplingPolicy,
    destination_cities,
    negative_positions,
    positive_rng,
    sample_negatives,
)

# chi-square 0.9999 quantile with 98 degrees of freedom
CHI2_98_9999 = 158.79


@pytest.fixture(scope="module")
def corpus():
    return generate(GenConfig(n_users=300, n_items=2400, n_cities=8, seed=5))


def _positive(target, cities=("c1",)):
    return TrainingInstance(
        "u",
        {"gender": "f", "age_level": "a1", "reside_city_id": "c0", "home_city_id": "c9"},
        tuple(RawOrder(f"o{i}", "flight", c) for i, c in enumerate(cities)),
        (),
        target,
    )


def test_policy_validation():
    with pytest.raises(ConfigurationError):
        SamplingPolicy(setting=4)
    with pytest.raises(ConfigurationError):
        SamplingPolicy(ratio=0)


@pytest.mark.parametrize("r, s2, s3", [(1, 0, 0), (2, 1, 0), (5, 2, 1), (8, 4, 1), (10, 5, 1), (15, 7, 2)])
def test_same_category_counts(r, s2, s3):
    assert r in RATIOS
    assert SamplingPolicy(2, r).same_category_count() == s2
    assert SamplingPolicy(3, r).same_category_count() == s3
    assert SamplingPolicy(1, r).same_category_count() == 0


def test_forced_choice():
    a, b = Item("a", "x", "c1"), Item("b", "y", "c1")
    for seed in range(20):
        negs = sample_negatives(_positive(a), ItemPool([a, b]), SamplingPolicy(1, 1, seed))
        assert [n.target for n in negs] == [b]
        assert negs[0].label_click == 0


def test_negatives_copy_user_side():
    a, b = Item("a", "x", "c1"), Item("b", "y", "c1")
    pos = _positive(a)
    neg = sample_negatives(pos, ItemPool([a, b]), SamplingPolicy(1, 1))[0]
    assert (neg.profile, neg.itinerary, neg.behavior, neg.label_intent) == (pos.profile, pos.itinerary, pos.behavior, pos.label_intent)


def _check_composition(pos, picks, pool, policy):
    assert len(picks) == policy.ratio
    assert len(set(picks.tolist())) == len(picks)
    assert pool.position[pos.target.item_id] not in picks
    if policy.setting == 1:
        return
    cities = set(destination_cities(pos))
    items = [pool.items[int(i)] for i in picks]
    assert all(it.dest_city_id in cities for it in items)
    same = sum(it.category_id == pos.target.category_id for it in items)
    assert same == policy.same_category_count()


@pytest.mark.parametrize("setting", [1, 2, 3])
@pytest.mark.parametrize("ratio", [1, 5, 10])
def test_composition_exact_over_training_set(corpus, setting, ratio):
    pool = ItemPool(corpus.items)
    policy = SamplingPolicy(setting, ratio, 3)
    for i, pos in enumerate(corpus.train):
        _check_composition(pos, negative_positions(pos, pool, policy, positive_rng(policy, 0, i)), pool, policy)


def test_multi_city_itinerary_uses_union_of_destinations():
    items = [Item(f"i{c}{k}", cat, c) for c in ("c1", "c2", "c3") for k, cat in enumerate(["x", "x", "y", "y", "z"])]
    pool = ItemPool(items)
    pos = _positive(items[0], cities=("c1", "c2"))
    seen = set()
    for seed in range(50):
        picks = negative_positions(pos, pool, SamplingPolicy(2, 4, seed), np.random.default_rng(seed))
        _check_composition(pos, picks, pool, SamplingPolicy(2, 4))
        seen |= {pool.items[int(p)].dest_city_id for p in picks}
    assert seen == {"c1", "c2"}


def test_stratum_exhaustion_names_stratum():
    items = [Item("a", "x", "c1"), Item("b", "x", "c1"), Item("c", "y", "c1")]
    with pytest.raises(StratumExhaustedError, match="c1.*x"):
        negative_positions(_positive(items[0]), ItemPool(items), SamplingPolicy(2, 4), np.random.default_rng(0))
    with pytest.raises(StratumExhaustedError, match="pool"):
        negative_positions(_positive(items[0]), ItemPool(items), SamplingPolicy(1, 3), np.random.default_rng(0))


def test_positive_needs_target():
    with pytest.raises(ConfigurationError):
        negative_positions(_positive(None), ItemPool([Item("a", "x", "c1")]), SamplingPolicy(), np.random.default_rng(0))


def test_duplicate_pool_ids_rejected():
    with pytest.raises(ConfigurationError):
        ItemPool([Item("a", "x", "c1"), Item("a", "y", "c2")])


def test_pool_indexes_consistent(corpus):
    pool = ItemPool(corpus.items)
    for city, rows in pool.by_city.items():
        assert all(pool.items[i].dest_city_id == city for i in rows)
    for (city, cat), rows in pool.by_city_category.items():
        assert all(pool.items[i].dest_city_id == city and pool.items[i].category_id == cat for i in rows)
    assert sum(len(v) for v in pool.by_city.values()) == len(pool)


def test_seeded_determinism(corpus):
    pool = ItemPool(corpus.items)
    policy = SamplingPolicy(3, 10, 42)

    def draw():
        return [negative_positions(p, pool, policy, positive_rng(policy, 1, i)).tolist() for i, p in enumerate(corpus.train[:200])]

    assert draw() == draw()
    other = SamplingPolicy(3, 10, 43)
    assert draw() != [negative_positions(p, pool, other, positive_rng(other, 1, i)).tolist() for i, p in enumerate(corpus.train[:200])]


def test_setting1_uniform():
    items = [Item(f"i{k:03d}", "x", "c1") for k in range(100)]
    pool = ItemPool(items)
    pos = _positive(items[17])
    rng = np.random.default_rng(2024)
    policy = SamplingPolicy(1, 10)
    counts = np.zeros(100)
    # 1e5 positives x 10 negatives: per-item std is about 1% of the mean
    for _ in range(100_000):
        np.add.at(counts, negative_positions(pos, pool, policy, rng), 1)
    assert counts[17] == 0
    others = np.delete(counts, 17)
    expected = others.sum() / 99
    assert np.max(np.abs(others / expected - 1)) < 0.05
    chi2 = float(((others - expected) ** 2 / expected).sum())
    assert chi2 < CHI2_98_9999


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 15), st.integers(0, 2**31), st.integers(0, 3))
def test_setting1_never_returns_positive_or_duplicates(r, seed, which):
    items = [Item(f"i{k}", "x", "c1") for k in range(16)]
    pool = ItemPool(items)
    picks = negative_positions(_positive(items[which]), pool, SamplingPolicy(1, r), np.random.default_rng(seed))
    assert len(set(picks.tolist())) == r and which not in picks


def test_target_outside_pool_is_fine_for_setting1():
    items = [Item(f"i{k}", "x", "c1") for k in range(5)]
    picks = negative_positions(_positive(Item("zz", "x", "c1")), ItemPool(items), SamplingPolicy(1, 5), np.random.default_rng(0))
    assert sorted(picks.tolist()) == [0, 1, 2, 3, 4]
