import pytest

from langlab.errors import ConfigError, ContractError
from langlab.ontology import (
    Ontology,
    OntologyConfig,
    SymbolCategory,
    SymbolId,
    build_ontology,
    is_desc_valid,
    is_rel_valid,
)

TRIVIAL = OntologyConfig(
    n_entities=1,
    n_classes=1,
    n_desc_properties=1,
    n_desc_values=1,
    n_rel_properties=0,
)


def test_default_counts(onto_default):
    assert onto_default.cfg.n_entities == 100
    assert onto_default.cfg.n_classes == 10
    assert onto_default.cfg.n_desc_properties == 460
    assert onto_default.cfg.n_desc_values == 40
    assert onto_default.cfg.n_rel_properties == 100
    assert len(onto_default.class_of) == 100
    assert set(onto_default.class_of) <= set(range(10))


def test_trivial_ontology_is_the_only_relation():
    onto = build_ontology(TRIVIAL, seed=99)
    assert onto.desc_valid == {(0, 0)}
    assert onto.rel_valid == frozenset()
    entity = SymbolId(SymbolCategory.SUBJECT, 0)
    prop = SymbolId(SymbolCategory.DESC_PROPERTY, 0)
    assert is_desc_valid(onto, entity, prop)


def test_determinism_bitwise():
    a = build_ontology(seed=7).to_manifest()
    b = build_ontology(seed=7).to_manifest()
    assert a == b
    assert a != build_ontology(seed=8).to_manifest()


def test_desc_validity_lookup(onto_small):
    licensed = next(iter(sorted(onto_small.desc_valid)))
    cls, prop_idx = licensed
    entity = SymbolId(SymbolCategory.SUBJECT, onto_small.entities_of_class(cls)[0])
    assert onto_small.is_desc_valid(entity, SymbolId(SymbolCategory.DESC_PROPERTY, prop_idx))
    unlicensed = next(
        (c, p)
        for c in range(onto_small.cfg.n_classes)
        for p in range(onto_small.cfg.n_desc_properties)
        if (c, p) not in onto_small.desc_valid
    )
    entity2 = SymbolId(SymbolCategory.SUBJECT, onto_small.entities_of_class(unlicensed[0])[0])
    assert not onto_small.is_desc_valid(
        entity2, SymbolId(SymbolCategory.DESC_PROPERTY, unlicensed[1])
    )


def test_rel_validity_and_asymmetry(onto_small):
    asym = next(
        (cs, r, co)
        for (cs, r, co) in sorted(onto_small.rel_valid)
        if cs != co and (co, r, cs) not in onto_small.rel_valid
    )
    cs, r, co = asym
    subj = SymbolId(SymbolCategory.SUBJECT, onto_small.entities_of_class(cs)[0])
    obj = SymbolId(SymbolCategory.OBJECT, onto_small.entities_of_class(co)[0])
    rel = SymbolId(SymbolCategory.REL_PROPERTY, r)
    assert onto_small.is_rel_valid(subj, rel, obj)
    swapped_subj = SymbolId(SymbolCategory.SUBJECT, obj.index)
    swapped_obj = SymbolId(SymbolCategory.OBJECT, subj.index)
    assert not onto_small.is_rel_valid(swapped_subj, rel, swapped_obj)


def test_category_mismatch_raises(onto_small):
    prop = SymbolId(SymbolCategory.DESC_PROPERTY, 0)
    entity = SymbolId(SymbolCategory.SUBJECT, 0)
    with pytest.raises(ContractError):
        onto_small.is_desc_valid(prop, prop)
    with pytest.raises(ContractError):
        onto_small.is_desc_valid(entity, entity)
    with pytest.raises(ContractError):
        is_rel_valid(onto_small, entity, entity, entity)


def test_coverage_every_entity_has_a_property(onto_default):
    for entity in range(onto_default.cfg.n_entities):
        assert onto_default.valid_desc_properties(onto_default.class_of[entity])


def test_falsifiability_at_defaults(onto_default):
    full = onto_default.cfg.n_classes * onto_default.cfg.n_desc_properties
    assert 0 < len(onto_default.desc_valid) < full


def test_value_slots_nonempty(onto_default):
    assert set(onto_default.desc_value_slots) == set(range(460))
    for values in onto_default.desc_value_slots.values():
        assert len(values) >= 1
        assert all(0 <= v < 40 for v in values)


def test_manifest_roundtrip(onto_small):
    text = onto_small.to_manifest()
    again = Ontology.from_manifest(text)
    assert again.to_manifest() == text
    assert again.desc_valid == onto_small.desc_valid
    assert again.rel_valid == onto_small.rel_valid
    assert again.class_of == onto_small.class_of


def test_config_errors_name_field():
    with pytest.raises(ConfigError, match="n_entities"):
        build_ontology(OntologyConfig(n_entities=0), seed=0)
    with pytest.raises(ConfigError, match="n_classes"):
        build_ontology(OntologyConfig(n_entities=5, n_classes=9), seed=0)
    with pytest.raises(ConfigError, match="desc_license_fraction"):
        build_ontology(OntologyConfig(desc_license_fraction=0.0), seed=0)


def test_vocabulary_order_is_stable(onto_small):
    vocab = onto_small.vocabulary()
    assert vocab == onto_small.vocabulary()
    assert vocab[0] == SymbolId(SymbolCategory.SUBJECT, 0)
    keys = [s.key() for s in vocab]
    assert len(keys) == len(set(keys))
    assert SymbolId(SymbolCategory.END_OF_SEQ, 0) in vocab
