"""Shared symbolic layer: concepts, classes, properties and the validity relation.

The ontology is the language-independent substrate: a fixed inventory of
abstract symbols plus a relation saying which descriptive properties may
describe which entity classes and which relational properties may link which
class pairs. Both surface languages realize the same ontology, so anything a
model learns about it in one language is in principle transferable to the
other.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property

import numpy as np

from .errors import ConfigError, ContractError


class SymbolCategory(str, Enum):
    """Grammatical category of an abstract symbol."""

    SUBJECT = "Subject"
    OBJECT = "Object"
    DESC_PROPERTY = "DescProperty"
    REL_PROPERTY = "RelProperty"
    DESC_VERB = "DescVerb"
    REL_VERB = "RelVerb"
    DESC_PREPOSITION = "DescPreposition"
    REL_PREPOSITION = "RelPreposition"
    CONJUNCTION = "Conjunction"
    PHRASE = "Phrase"
    SEPARATOR = "Separator"
    END_OF_SEQ = "EndOfSeq"


# Categories whose symbols realize to a fixed literal spelling instead of a
# generated word. They are identical in both languages.
STRUCTURAL_CATEGORIES = frozenset(
    {SymbolCategory.PHRASE, SymbolCategory.SEPARATOR, SymbolCategory.END_OF_SEQ}
)

STRUCTURAL_LITERALS = {
    SymbolCategory.PHRASE: "[P]",
    SymbolCategory.SEPARATOR: "<sep>",
    SymbolCategory.END_OF_SEQ: "<eos>",
}

# Entity-like categories share the entity index space (0 .. n_entities-1) and
# therefore the entity -> class map.
ENTITY_CATEGORIES = frozenset({SymbolCategory.SUBJECT, SymbolCategory.OBJECT})


@dataclass(frozen=True, order=True)
class SymbolId:
    """An abstract vocabulary item: a category plus an index unique within it."""

    category: SymbolCategory
    index: int

    def key(self) -> str:
        return f"{self.category.value}:{self.index}"

    @staticmethod
    def parse(key: str) -> "SymbolId":
        cat, _, idx = key.partition(":")
        return SymbolId(SymbolCategory(cat), int(idx))


@dataclass
class OntologyConfig:
    n_entities: int = 100
    n_classes: int = 10
    n_desc_properties: int = 460
    n_desc_values: int = 40
    n_rel_properties: int = 100
    # Fraction of the descriptive-property inventory each class licenses, and
    # of the class-pair lattice each relational property licenses. Both must
    # leave the relation falsifiable (strictly below the full cross product).
    desc_license_fraction: float = 0.5
    rel_license_fraction: float = 0.5
    # Function-word inventories (not part of the concept counts).
    n_desc_prepositions: int = 1
    n_rel_prepositions: int = 1
    n_conjunctions: int = 1

    def validate(self) -> None:
        for name in (
            "n_entities",
            "n_classes",
            "n_desc_properties",
            "n_desc_values",
            "n_desc_prepositions",
            "n_rel_prepositions",
            "n_conjunctions",
        ):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.n_rel_properties < 0:
            raise ConfigError(f"n_rel_properties must be >= 0, got {self.n_rel_properties}")
        if self.n_classes > self.n_entities:
            raise ConfigError(
                f"n_classes must not exceed n_entities "
                f"({self.n_classes} > {self.n_entities})"
            )
        for name in ("desc_license_fraction", "rel_license_fraction"):
            frac = getattr(self, name)
            if not 0.0 < frac <= 1.0:
                raise ConfigError(f"{name} must be in (0, 1], got {frac}")


@dataclass
class Ontology:
    """Immutable after build; all queries are pure lookups."""

    cfg: OntologyConfig
    seed: int
    class_of: tuple[int, ...]  # entity index -> class index
    desc_valid: frozenset[tuple[int, int]]  # (class, desc property)
    rel_valid: frozenset[tuple[int, int, int]]  # (subject class, rel property, object class)
    desc_value_slots: dict[int, tuple[int, ...]]  # desc property -> value indices
    tau: dict[str, str] = field(default_factory=dict)  # symbol key -> type label

    # -- symbol inventory -------------------------------------------------

    def symbols(self, category: SymbolCategory) -> list[SymbolId]:
        n = self.category_size(category)
        return [SymbolId(category, i) for i in range(n)]

    def category_size(self, category: SymbolCategory) -> int:
        c = self.cfg
        sizes = {
            SymbolCategory.SUBJECT: c.n_entities,
            SymbolCategory.OBJECT: c.n_entities,
            SymbolCategory.DESC_PROPERTY: c.n_desc_properties,
            SymbolCategory.REL_PROPERTY: c.n_rel_properties,
            SymbolCategory.DESC_PREPOSITION: c.n_desc_prepositions,
            SymbolCategory.REL_PREPOSITION: c.n_rel_prepositions,
            SymbolCategory.CONJUNCTION: c.n_conjunctions,
            SymbolCategory.PHRASE: 1,
            SymbolCategory.SEPARATOR: 1,
            SymbolCategory.END_OF_SEQ: 1,
            SymbolCategory.DESC_VERB: 0,
            SymbolCategory.REL_VERB: 0,
        }
        return sizes[category]

    def vocabulary(self) -> list[SymbolId]:
        """Every realizable symbol, in a fixed deterministic order."""
        order = [
            SymbolCategory.SUBJECT,
            SymbolCategory.OBJECT,
            SymbolCategory.DESC_PROPERTY,
            SymbolCategory.REL_PROPERTY,
            SymbolCategory.DESC_PREPOSITION,
            SymbolCategory.REL_PREPOSITION,
            SymbolCategory.CONJUNCTION,
            SymbolCategory.PHRASE,
            SymbolCategory.SEPARATOR,
            SymbolCategory.END_OF_SEQ,
        ]
        out: list[SymbolId] = []
        for cat in order:
            out.extend(self.symbols(cat))
        return out

    # -- validity queries --------------------------------------------------

    def is_desc_valid(self, entity: SymbolId, prop: SymbolId) -> bool:
        if entity.category not in ENTITY_CATEGORIES:
            raise ContractError(f"{entity.key()} is not a Subject/Object symbol")
        if prop.category is not SymbolCategory.DESC_PROPERTY:
            raise ContractError(f"{prop.key()} is not a DescProperty symbol")
        return (self.class_of[entity.index], prop.index) in self.desc_valid

    def is_rel_valid(self, subj: SymbolId, rel: SymbolId, obj: SymbolId) -> bool:
        if subj.category not in ENTITY_CATEGORIES:
            raise ContractError(f"{subj.key()} is not a Subject/Object symbol")
        if rel.category is not SymbolCategory.REL_PROPERTY:
            raise ContractError(f"{rel.key()} is not a RelProperty symbol")
        if obj.category not in ENTITY_CATEGORIES:
            raise ContractError(f"{obj.key()} is not a Subject/Object symbol")
        return (
            self.class_of[subj.index],
            rel.index,
            self.class_of[obj.index],
        ) in self.rel_valid

    # Dense lookup tables for the generation hot path. Derived, not serialized.

    @cached_property
    def class_array(self) -> np.ndarray:
        return np.asarray(self.class_of, dtype=np.int64)

    @cached_property
    def desc_mask(self) -> np.ndarray:
        mask = np.zeros((self.cfg.n_classes, self.cfg.n_desc_properties), dtype=bool)
        for c, p in self.desc_valid:
            mask[c, p] = True
        return mask

    @cached_property
    def rel_mask(self) -> np.ndarray:
        mask = np.zeros(
            (self.cfg.n_classes, max(self.cfg.n_rel_properties, 1), self.cfg.n_classes),
            dtype=bool,
        )
        for cs, r, co in self.rel_valid:
            mask[cs, r, co] = True
        return mask

    def valid_desc_properties(self, entity_class: int) -> list[int]:
        return sorted(p for (c, p) in self.desc_valid if c == entity_class)

    def entities_of_class(self, entity_class: int) -> list[int]:
        return [e for e, c in enumerate(self.class_of) if c == entity_class]

    def classes_licensing(self, prop_index: int) -> list[int]:
        return sorted(c for (c, p) in self.desc_valid if p == prop_index)

    # -- serialization -----------------------------------------------------

    def to_manifest(self) -> str:
        doc = {
            "seed": self.seed,
            "config": vars(self.cfg),
            "class_of": list(self.class_of),
            "desc_valid": sorted(list(p) for p in self.desc_valid),
            "rel_valid": sorted(list(t) for t in self.rel_valid),
            "desc_value_slots": {str(k): list(v) for k, v in sorted(self.desc_value_slots.items())},
            "tau": dict(sorted(self.tau.items())),
        }
        return json.dumps(doc, indent=1, sort_keys=True)

    @staticmethod
    def from_manifest(text: str) -> "Ontology":
        doc = json.loads(text)
        return Ontology(
            cfg=OntologyConfig(**doc["config"]),
            seed=doc["seed"],
            class_of=tuple(doc["class_of"]),
            desc_valid=frozenset(tuple(p) for p in doc["desc_valid"]),
            rel_valid=frozenset(tuple(t) for t in doc["rel_valid"]),
            desc_value_slots={int(k): tuple(v) for k, v in doc["desc_value_slots"].items()},
            tau=doc["tau"],
        )


def _subset(rng: np.random.Generator, pool: int, size: int) -> list[int]:
    size = max(1, min(pool, size))
    return sorted(rng.choice(pool, size=size, replace=False).tolist())


def build_ontology(cfg: OntologyConfig | None = None, seed: int = 0) -> Ontology:
    """Construct the ontology deterministically from (cfg, seed).

    Entities are assigned to classes uniformly at random; each class licenses
    a uniform random subset of the descriptive properties (size set by
    ``desc_license_fraction``, at least one); each relational property
    licenses a uniform random subset of (subject class, object class) pairs.
    """
    cfg = cfg or OntologyConfig()
    cfg.validate()
    rng = np.random.default_rng(np.random.SeedSequence(seed))

    class_of = tuple(int(c) for c in rng.integers(0, cfg.n_classes, size=cfg.n_entities))

    desc_size = max(1, round(cfg.desc_license_fraction * cfg.n_desc_properties))
    desc_valid = set()
    for c in range(cfg.n_classes):
        for p in _subset(rng, cfg.n_desc_properties, desc_size):
            desc_valid.add((c, p))
    # a property no class licenses could never surface in any sentence;
    # attach each orphan to one uniformly drawn class
    licensed = {p for (_, p) in desc_valid}
    for p in range(cfg.n_desc_properties):
        if p not in licensed:
            desc_valid.add((int(rng.integers(0, cfg.n_classes)), p))

    rel_pairs = cfg.n_classes * cfg.n_classes
    rel_size = max(1, round(cfg.rel_license_fraction * rel_pairs))
    rel_valid = set()
    for r in range(cfg.n_rel_properties):
        for flat in _subset(rng, rel_pairs, rel_size):
            rel_valid.add((flat // cfg.n_classes, r, flat % cfg.n_classes))

    value_slots = {}
    for p in range(cfg.n_desc_properties):
        n = int(rng.integers(1, cfg.n_desc_values + 1))
        value_slots[p] = tuple(_subset(rng, cfg.n_desc_values, n))

    onto = Ontology(
        cfg=cfg,
        seed=seed,
        class_of=class_of,
        desc_valid=frozenset(desc_valid),
        rel_valid=frozenset(rel_valid),
        desc_value_slots=value_slots,
    )
    onto.tau = _type_labels(onto)
    return onto


def _type_labels(onto: Ontology) -> dict[str, str]:
    labels = {}
    for sym in onto.vocabulary():
        if sym.category in ENTITY_CATEGORIES:
            labels[sym.key()] = f"class:{onto.class_of[sym.index]}"
        else:
            labels[sym.key()] = sym.category.value
    return labels


def is_desc_valid(onto: Ontology, entity: SymbolId, prop: SymbolId) -> bool:
    return onto.is_desc_valid(entity, prop)


def is_rel_valid(onto: Ontology, subj: SymbolId, rel: SymbolId, obj: SymbolId) -> bool:
    return onto.is_rel_valid(subj, rel, obj)
