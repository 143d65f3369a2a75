import json

import numpy as np
import pytest

from chainrec.catalog import (
    Catalog,
    CatalogError,
    SynthConfig,
    generate_synthetic,
    load_catalog,
    save_catalog,
    split_interactions,
    validate_catalog,
)


def tiny_catalog() -> Catalog:
    # 1 user, 3 items, 2 attributes over 1 type
    return Catalog(
        num_users=1,
        items=[(0, (0,)), (1, (0, 1)), (2, (1,))],
        attributes=[(0, 0), (1, 0)],
        interactions=[(0, 1)],
        kg_triples=[(1, 0, 4), (2, 0, 4), (2, 0, 5), (3, 0, 5), (0, 1, 2)],
    )


def test_fixture_counts():
    c = tiny_catalog()
    assert c.counts() == {
        "users": 1, "items": 3, "attributes": 2, "types": 1,
        "interactions": 1, "triples": 5,
    }


def test_roundtrip_identity(tmp_path):
    c = tiny_catalog()
    c.labels = {"attribute": {0: "loud", 1: "quiet"}}
    save_catalog(c, tmp_path)
    loaded = load_catalog(tmp_path)
    assert loaded.num_users == c.num_users
    assert loaded.items == c.items
    assert loaded.attributes == c.attributes
    assert loaded.interactions == c.interactions
    assert loaded.kg_triples == c.kg_triples
    assert loaded.labels == c.labels


def test_load_reports_line_numbers(tmp_path):
    save_catalog(tiny_catalog(), tmp_path)
    bad = tmp_path / "items.jsonl"
    bad.write_text(bad.read_text() + "{not json\n")
    with pytest.raises(CatalogError, match=r"items\.jsonl:4"):
        load_catalog(tmp_path)


def test_load_empty_items_errors(tmp_path):
    save_catalog(tiny_catalog(), tmp_path)
    (tmp_path / "items.jsonl").write_text("")
    with pytest.raises(CatalogError, match="no items"):
        load_catalog(tmp_path)


def test_load_duplicate_item_errors(tmp_path):
    save_catalog(tiny_catalog(), tmp_path)
    with open(tmp_path / "items.jsonl", "a") as fh:
        fh.write(json.dumps({"item_id": 0, "attributes": [1]}) + "\n")
    with pytest.raises(CatalogError, match="duplicate item id 0"):
        load_catalog(tmp_path)


def test_load_missing_file_errors(tmp_path):
    save_catalog(tiny_catalog(), tmp_path)
    (tmp_path / "kg_triples.jsonl").unlink()
    with pytest.raises(CatalogError, match="missing catalog file"):
        load_catalog(tmp_path)


def test_validate_clean_fixture():
    assert validate_catalog(tiny_catalog()) == []


def test_validate_dangling_attribute():
    c = tiny_catalog()
    c.items[1] = (1, (0, 999))
    issues = validate_catalog(Catalog(c.num_users, c.items, c.attributes,
                                      c.interactions, c.kg_triples))
    assert any("dangling attribute 999 in item 1" in msg for msg in issues)


def test_validate_attribute_with_two_types():
    c = tiny_catalog()
    attrs = c.attributes + [(1, 3)]
    issues = validate_catalog(Catalog(c.num_users, c.items, attrs,
                                      c.interactions, c.kg_triples))
    assert any("two types" in msg for msg in issues)


def test_validate_dangling_triple_entity():
    c = tiny_catalog()
    triples = c.kg_triples + [(99, 0, 0)]
    issues = validate_catalog(Catalog(c.num_users, c.items, c.attributes,
                                      c.interactions, triples))
    assert any("dangling entity" in msg for msg in issues)


def test_synthetic_deterministic():
    cfg = SynthConfig(10, 100, 30, 6, 3, 5)
    a = generate_synthetic(cfg, seed=7)
    b = generate_synthetic(cfg, seed=7)
    assert a.items == b.items
    assert a.interactions == b.interactions
    assert a.kg_triples == b.kg_triples


def test_synthetic_infeasible_config():
    with pytest.raises(CatalogError):
        generate_synthetic(SynthConfig(2, 4, 4, 2, 0, 1), seed=1)
    with pytest.raises(CatalogError):
        generate_synthetic(SynthConfig(2, 4, 4, 2, 5, 1), seed=1)


def test_synthetic_attrs_per_item_exact():
    c = generate_synthetic(SynthConfig(2, 4, 4, 2, 2, 1), seed=1)
    for _, attrs in c.items:
        assert len(attrs) == 2
        assert len(set(attrs)) == 2


def test_synthetic_always_validates():
    cfg = SynthConfig(5, 40, 12, 4, 3, 4)
    for seed in range(100):
        assert validate_catalog(generate_synthetic(cfg, seed)) == []


def test_synthetic_roundtrip(tmp_path):
    c = generate_synthetic(SynthConfig(10, 100, 30, 6, 3, 5), seed=7)
    save_catalog(c, tmp_path)
    loaded = load_catalog(tmp_path)
    assert loaded.items == c.items
    assert loaded.kg_triples == c.kg_triples


def test_split_disjoint_and_complete():
    c = generate_synthetic(SynthConfig(10, 50, 20, 4, 3, 5), seed=3)
    split = split_interactions(c, seed=11)
    parts = [split.train, split.validation, split.test]
    assert sum(len(p) for p in parts) == len(c.interactions)
    # same multiset as the source interactions
    flat = sorted(split.train + split.validation + split.test)
    assert flat == sorted(c.interactions)


def test_csr_indexes_consistent():
    c = generate_synthetic(SynthConfig(4, 30, 10, 3, 3, 2), seed=5)
    for item_id, attrs in c.items:
        assert list(c.item_attrs(item_id)) == sorted(attrs)
    for attr_id in range(c.num_attributes):
        via_csr = set(c.attr_indices[c.attr_indptr[attr_id]:c.attr_indptr[attr_id + 1]])
        brute = {i for i, attrs in c.items if attr_id in attrs}
        assert via_csr == brute
    assert np.all(c.attr_type >= 0)
