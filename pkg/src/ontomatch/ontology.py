"""Ontology loading and the entity/term index.

An ontology arrives as a label dump: one entity per line,
``entity_id<TAB>preferred_label<TAB>syn1|syn2|...`` with ``#`` comments and
blank lines ignored. The synonym field may be empty or absent. Entities are
immutable once loaded.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Iterator

from .errors import DuplicateEntityId, EmptyOntology, MalformedRecord, UnknownEntity

_WHITESPACE = re.compile(r"\s+")


def normalize_label(text: str) -> str:
    """Collapse runs of whitespace and strip the ends."""
    return _WHITESPACE.sub(" ", text).strip()


@dataclass(frozen=True)
class Entity:
    """One ontology entity: an id, a preferred label, optional synonyms.

    Synonyms keep their dump order, minus duplicates and minus any synonym
    identical to the preferred label.
    """

    id: str
    preferred_label: str
    synonyms: tuple[str, ...] = ()

    @property
    def labels(self) -> tuple[str, ...]:
        """All labels, preferred first, synonyms in load order."""
        return (self.preferred_label,) + self.synonyms


@dataclass(frozen=True)
class Ontology:
    """An immutable named collection of entities."""

    name: str
    entities: tuple[Entity, ...]
    _by_id: dict[str, Entity] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        by_id: dict[str, Entity] = {}
        for entity in self.entities:
            if entity.id in by_id:
                raise DuplicateEntityId(
                    f"entity id {entity.id!r} appears more than once in {self.name!r}"
                )
            by_id[entity.id] = entity
        object.__setattr__(self, "_by_id", by_id)

    def __len__(self) -> int:
        return len(self.entities)

    def __iter__(self) -> Iterator[Entity]:
        return iter(self.entities)

    def __contains__(self, entity_id: str) -> bool:
        return entity_id in self._by_id

    def entity(self, entity_id: str) -> Entity:
        try:
            return self._by_id[entity_id]
        except KeyError:
            raise UnknownEntity(
                f"{self.name!r} has no entity {entity_id!r}"
            ) from None

    @property
    def ids(self) -> tuple[str, ...]:
        return tuple(entity.id for entity in self.entities)


@dataclass(frozen=True)
class EntityTermIndex:
    """Three mutually consistent lookup tables over one ontology.

    entity_to_terms maps each entity id to its labels (preferred first).
    preferred_to_entities maps a preferred label to the ids that use it as
    preferred. term_to_entities maps any label to every id that owns it.
    """

    entity_to_terms: dict[str, tuple[str, ...]]
    preferred_to_entities: dict[str, frozenset[str]]
    term_to_entities: dict[str, frozenset[str]]

    @property
    def terms(self) -> tuple[str, ...]:
        """Every distinct label in the ontology, sorted."""
        return tuple(sorted(self.term_to_entities))


def _parse_line(path: str, line_no: int, line: str) -> Entity:
    fields = line.split("\t")
    if len(fields) == 2:
        fields.append("")
    if len(fields) != 3:
        raise MalformedRecord(
            path, line_no, f"expected 2 or 3 tab-separated fields, got {len(fields)}"
        )
    entity_id = fields[0].strip()
    preferred = normalize_label(fields[1])
    if not entity_id:
        raise MalformedRecord(path, line_no, "empty entity id")
    if not preferred:
        raise MalformedRecord(path, line_no, "empty preferred label")
    synonyms: list[str] = []
    for raw in fields[2].split("|"):
        synonym = normalize_label(raw)
        if synonym and synonym != preferred and synonym not in synonyms:
            synonyms.append(synonym)
    return Entity(id=entity_id, preferred_label=preferred, synonyms=tuple(synonyms))


def load_ontology(path: str, name: str) -> Ontology:
    """Parse a label dump into an Ontology.

    Raises MalformedRecord with the offending line number, DuplicateEntityId
    on repeated ids, and EmptyOntology when no entity lines remain.
    """
    entities: list[Entity] = []
    seen: set[str] = set()
    with open(path, "r", encoding="utf-8") as handle:
        for line_no, raw in enumerate(handle, start=1):
            line = raw.rstrip("\n").rstrip("\r")
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            entity = _parse_line(path, line_no, line)
            if entity.id in seen:
                raise DuplicateEntityId(
                    f"{path}:{line_no}: entity id {entity.id!r} already defined"
                )
            seen.add(entity.id)
            entities.append(entity)
    if not entities:
        raise EmptyOntology(f"{path} contains no entities")
    return Ontology(name=name, entities=tuple(entities))


def build_entity_term_index(ontology: Ontology) -> EntityTermIndex:
    """Build the three lookup tables for one ontology."""
    entity_to_terms: dict[str, tuple[str, ...]] = {}
    preferred_to_entities: dict[str, set[str]] = {}
    term_to_entities: dict[str, set[str]] = {}
    for entity in ontology:
        entity_to_terms[entity.id] = entity.labels
        preferred_to_entities.setdefault(entity.preferred_label, set()).add(entity.id)
        for term in entity.labels:
            term_to_entities.setdefault(term, set()).add(entity.id)
    return EntityTermIndex(
        entity_to_terms=entity_to_terms,
        preferred_to_entities={
            term: frozenset(ids) for term, ids in preferred_to_entities.items()
        },
        term_to_entities={
            term: frozenset(ids) for term, ids in term_to_entities.items()
        },
    )


def labels_of(index: EntityTermIndex, entity_id: str) -> tuple[str, ...]:
    """Labels of one entity, preferred first, synonyms in load order."""
    try:
        return index.entity_to_terms[entity_id]
    except KeyError:
        raise UnknownEntity(f"no entity {entity_id!r} in index") from None
