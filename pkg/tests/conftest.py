import numpy as np
import pytest

from fitnet.datagen import GenConfig, generate
from fitnet.features import Item, RawOrder, TrainingInstance, build_vocabularies
from fitnet.model import ModelConfig

SMALL_DIMS = {
    "item_id": 3,
    "category_id": 2,
    "dest_city_id": 2,
    "reside_city_id": 2,
    "home_city_id": 2,
    "gender": 2,
    "age_level": 2,
}


def small_config(**kw) -> ModelConfig:
    base = dict(
        embedding_dims=SMALL_DIMS,
        self_attention_dim=16,
        n_heads=8,
        intention_hidden=(4,),
        user_hidden=(6,),
        item_hidden=(6,),
        repr_dim=4,
        seed=11,
    )
    base.update(kw)
    return ModelConfig(**base)


def micro_instance(label_click=1, label_intent=1) -> TrainingInstance:
    """Two-order itinerary (transfer then flight), three behaviour items."""
    return TrainingInstance(
        user_id="u1",
        profile={"gender": "f", "age_level": "age3", "reside_city_id": "cA", "home_city_id": "cB"},
        itinerary=(
            RawOrder("i1", "transfer", "cT", 0),
            RawOrder("i2", "flight", "cD", 1),
        ),
        behavior=(Item("i7", "tour00", "cX"), Item("i8", "local00", "cD"), Item("i9", "tour00", "cD")),
        target=Item("i5", "tour00", "cD"),
        label_click=label_click,
        label_intent=label_intent,
    )


@pytest.fixture
def micro():
    inst = micro_instance()
    extra = [Item("i6", "local00", "cD"), Item("i4", "hotel", "cT")]
    vocabs = build_vocabularies([inst], [inst.target, *extra])
    return inst, vocabs, extra


@pytest.fixture(scope="session")
def small_corpus():
    return generate(GenConfig(n_users=150, n_items=480, n_cities=8, seed=3))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# one line per acceptance criterion, collected by tests/test_acceptance.py
ACCEPTANCE: list[tuple[str, bool, str]] = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, detail in ACCEPTANCE:
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
