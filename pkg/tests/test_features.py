import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fitnet.errors import DataError
from fitnet.features import (
    FEATURE_GROUPS,
    ITEM_FEATURES,
    PROFILE_FEATURES,
    UNKNOWN,
    Item,
    RawOrder,
    TrainingInstance,
    Vocabulary,
    build_vocabularies,
    decode_instance,
    encode_instance,
    read_instances,
    read_items,
    read_vocabularies,
    write_instances,
    write_items,
    write_vocabularies,
)

from conftest import micro_instance


def _inst(cities, gender="f"):
    return TrainingInstance(
        "u",
        {"gender": gender, "age_level": "a", "reside_city_id": cities[0], "home_city_id": cities[-1]},
        tuple(RawOrder(f"o{i}", "flight", c) for i, c in enumerate(cities)),
        (),
        None,
    )


def test_city_vocabulary_has_unknown_plus_values():
    v = build_vocabularies([_inst(["A", "B"])])
    assert v["itinerary.dest_city_id"].size == 3
    assert v["itinerary.dest_city_id"].values == [UNKNOWN, "A", "B"]


def test_build_is_deterministic_and_sorted(small_corpus):
    a = build_vocabularies(small_corpus.train, small_corpus.items)
    b = build_vocabularies(list(reversed(small_corpus.train)), list(reversed(small_corpus.items)))
    assert {k: v.values for k, v in a.items()} == {k: v.values for k, v in b.items()}
    for v in a.values():
        assert v.values[1:] == sorted(v.values[1:])


def test_empty_corpus_rejected():
    with pytest.raises(DataError):
        build_vocabularies([])


def test_encode_examples():
    v = build_vocabularies([_inst(["A", "B", "C"]), _inst(["A"], gender="m")])
    enc = encode_instance(_inst(["A", "B", "C"]), v)
    assert enc.profile[PROFILE_FEATURES.index("gender")] == 1  # {unk, f, m}
    assert enc.itinerary.shape == (3, 3)
    np.testing.assert_array_equal(enc.itinerary[:, 2], [1, 2, 3])
    odd = encode_instance(_inst(["Z"]), v)
    assert odd.itinerary[0, 2] == 0  # city Z never seen
    assert odd.profile[PROFILE_FEATURES.index("reside_city_id")] == 0


def test_roundtrip_over_corpus(small_corpus):
    v = build_vocabularies(small_corpus.train + small_corpus.test, small_corpus.items)
    for inst in small_corpus.train + small_corpus.test:
        dec = decode_instance(encode_instance(inst, v), v)
        assert dec["profile"] == dict(inst.profile)
        assert dec["itinerary"] == [(o.item_id, o.category_id, o.dest_city_id) for o in inst.itinerary]
        assert dec["behavior"] == [(b.item_id, b.category_id, b.dest_city_id) for b in inst.behavior]
        t = inst.target
        assert dec["target"] == (t.item_id, t.category_id, t.dest_city_id)


def test_encoding_is_injective_and_structural(small_corpus):
    v = build_vocabularies(small_corpus.train, small_corpus.items)
    for voc in v.values():
        assert len(set(voc.index.values())) == voc.size
        assert sorted(voc.index.values()) == list(range(voc.size))
    inst = small_corpus.train[0]
    enc = encode_instance(inst, v)
    # one-hot: one index per feature; multi-hot: one index per list member
    assert enc.profile.shape == (len(PROFILE_FEATURES),)
    assert enc.target.shape == (len(ITEM_FEATURES),)
    assert enc.itinerary.shape[0] == len(inst.itinerary)
    assert enc.behavior.shape[0] == len(inst.behavior)


def test_feature_groups_encoding_kinds():
    for g in ("profile", "target"):
        assert {k for _, k in FEATURE_GROUPS[g].features} == {"one-hot"}
    for g in ("itinerary", "behavior"):
        assert {k for _, k in FEATURE_GROUPS[g].features} == {"multi-hot"}


@settings(max_examples=50, deadline=None)
@given(st.lists(st.text("abcdef", min_size=1, max_size=3), min_size=1, max_size=8))
def test_known_values_never_map_to_unknown(cities):
    v = build_vocabularies([_inst(cities)])
    enc = encode_instance(_inst(cities), v)
    assert np.all(enc.itinerary > 0)
    assert [v["itinerary.dest_city_id"].decode(int(i)) for i in enc.itinerary[:, 2]] == cities


def test_instance_invariants():
    with pytest.raises(DataError):
        TrainingInstance("u", {}, (), (), None)
    with pytest.raises(DataError):
        micro_instance(label_click=2)


def test_timestamp_order_enforced():
    rec = micro_instance().to_dict()
    rec["behavior"][0]["ts"] = 5
    rec["itinerary"][0]["ts"] = 9
    TrainingInstance.from_dict(rec)
    rec["behavior"][0]["ts"] = 9
    with pytest.raises(DataError, match="precede"):
        TrainingInstance.from_dict(rec)


def test_corpus_files_roundtrip(tmp_path, small_corpus):
    write_instances(tmp_path / "x.jsonl", small_corpus.train[:20])
    assert read_instances(tmp_path / "x.jsonl") == small_corpus.train[:20]
    write_items(tmp_path / "i.jsonl", small_corpus.items[:5])
    assert read_items(tmp_path / "i.jsonl") == small_corpus.items[:5]
    first = json.loads((tmp_path / "x.jsonl").read_text().splitlines()[0])
    assert set(first) == {"user_id", "profile", "itinerary", "behavior", "target", "label_click", "label_intent"}


def test_bad_record_reports_line(tmp_path):
    p = tmp_path / "bad.jsonl"
    p.write_text(json.dumps(micro_instance().to_dict()) + "\n{not json\n")
    with pytest.raises(DataError, match=":2:"):
        read_instances(p)
    p.write_text('{"user_id": "u"}\n')
    with pytest.raises(DataError, match=":1:"):
        read_instances(p)


def test_vocabulary_file_roundtrip(tmp_path):
    v = build_vocabularies([micro_instance()])
    write_vocabularies(tmp_path, v)
    back = read_vocabularies(tmp_path)
    assert {k: x.values for k, x in back.items()} == {k: x.values for k, x in v.items()}
    lines = (tmp_path / "profile.gender.txt").read_text().splitlines()
    assert lines == ["profile.gender", UNKNOWN, "f"]


def test_vocabulary_rejects_bad_layout():
    with pytest.raises(DataError):
        Vocabulary("x", ["a"])
    with pytest.raises(DataError):
        Vocabulary("x", [UNKNOWN, "a", "a"])


def test_item_roundtrip():
    it = Item("i1", "hotel", "c1")
    assert Item.from_dict(it.to_dict()) == it
