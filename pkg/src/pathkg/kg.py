"""Knowledge-graph store: vocabularies, triple splits, adjacency index, type hierarchies."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, NamedTuple

import numpy as np

from .errors import ConfigError, ParseError, ValidationError

logger = logging.getLogger(__name__)

INVERSE_MARKER = "^-1"
COLUMN_ORDERS = ("HRT", "HTR")


class Triple(NamedTuple):
    head: int
    relation: int
    tail: int


@dataclass
class Vocab:
    entity_names: list[str]
    relation_names: list[str]
    inverse_of: list[int]
    entity_ids: dict[str, int] = field(init=False, repr=False)
    relation_ids: dict[str, int] = field(init=False, repr=False)

    def __post_init__(self):
        self.entity_ids = {name: i for i, name in enumerate(self.entity_names)}
        self.relation_ids = {name: i for i, name in enumerate(self.relation_names)}

    @classmethod
    def build(cls, entity_names: Iterable[str], original_relations: Iterable[str]) -> "Vocab":
        """Vocabulary with one synthesized inverse appended per original relation."""
        entities = list(entity_names)
        originals = list(original_relations)
        n = len(originals)
        relations = originals + [name + INVERSE_MARKER for name in originals]
        inverse_of = [i + n for i in range(n)] + [i for i in range(n)]
        return cls(entities, relations, inverse_of)

    @property
    def num_entities(self) -> int:
        return len(self.entity_names)

    @property
    def num_relations(self) -> int:
        return len(self.relation_names)

    @property
    def num_original_relations(self) -> int:
        return len(self.relation_names) // 2

    def is_inverse(self, r: int) -> bool:
        return r >= self.num_original_relations

    def entity(self, name: str) -> int:
        return self.entity_ids[name]

    def relation(self, name: str) -> int:
        return self.relation_ids[name]


class Graph:
    """Triple splits plus an out-edge index over the traversable split(s).

    ``out_index`` maps ``(entity, relation)`` to the sorted tuple of
    successors; every indexed triple ``(h, r, t)`` is also present as
    ``(t, r^-1) -> h``.  Instances are treated as immutable once built.
    """

    def __init__(self, vocab: Vocab, train, valid=(), test=(), index_test: bool = False):
        self.vocab = vocab
        self.train = _as_triple_array(train)
        self.valid = _as_triple_array(valid)
        self.test = _as_triple_array(test)
        self.triples = frozenset(Triple(*map(int, row)) for row in self.train)
        self.index_test = index_test
        indexed = [self.train, self.test] if index_test else [self.train]
        self.out_index = _build_out_index(vocab, np.concatenate(indexed, axis=0))
        adjacency: dict[int, list] = {}
        for (src, r), succ in sorted(self.out_index.items()):
            adjacency.setdefault(src, []).append((r, succ))
        self.adjacency = adjacency
        self._known: frozenset[Triple] | None = None

    @property
    def known(self) -> frozenset:
        """All triples from train, valid and test (the ranking filter set)."""
        if self._known is None:
            rows = np.concatenate([self.train, self.valid, self.test], axis=0)
            self._known = frozenset(Triple(*map(int, row)) for row in rows)
        return self._known

    @property
    def indexed_triples(self) -> frozenset:
        if not self.index_test:
            return self.triples
        return self.triples | frozenset(Triple(*map(int, row)) for row in self.test)

    def with_test_edges(self) -> "Graph":
        """Same vocab and splits, but test triples become traversable too."""
        return Graph(self.vocab, self.train, self.valid, self.test, index_test=True)

    def num_indexed_edges(self) -> int:
        return sum(len(v) for v in self.out_index.values())

    def out_degree(self, e: int, r: int) -> int:
        return len(self.out_index.get((e, r), ()))

    def edges_from(self, e: int) -> list[tuple[int, tuple[int, ...]]]:
        """``[(relation, successors), ...]`` for ``e``, ascending by relation id."""
        return self.adjacency.get(e, [])

    @classmethod
    def from_names(cls, train, valid=(), test=()) -> "Graph":
        """Build a graph from ``(head, relation, tail)`` name tuples; handy for small fixtures."""
        splits = [list(train), list(valid), list(test)]
        entities, relations = _collect_names(splits)
        vocab = Vocab.build(entities, relations)
        arrays = [_encode(split, vocab) for split in splits]
        return cls(vocab, *arrays)


def neighbors(graph: Graph, e: int, r: int) -> list[int]:
    """Successors of ``e`` via ``r`` (inverse relations included), ascending by id."""
    return list(graph.out_index.get((e, r), ()))


def _as_triple_array(triples) -> np.ndarray:
    arr = np.asarray(list(triples) if not isinstance(triples, np.ndarray) else triples, dtype=np.int64)
    if arr.size == 0:
        return np.zeros((0, 3), dtype=np.int64)
    return arr.reshape(-1, 3)


def _build_out_index(vocab: Vocab, rows: np.ndarray) -> dict:
    index: dict[tuple[int, int], set] = {}
    inv = vocab.inverse_of
    for h, r, t in rows.tolist():
        index.setdefault((h, r), set()).add(t)
        index.setdefault((t, inv[r]), set()).add(h)
    return {key: tuple(sorted(succ)) for key, succ in index.items()}


def _collect_names(splits):
    entities: dict[str, None] = {}
    relations: dict[str, None] = {}
    for split in splits:
        for h, r, t in split:
            entities.setdefault(h, None)
            relations.setdefault(r, None)
            entities.setdefault(t, None)
    return list(entities), list(relations)


def _encode(split, vocab: Vocab) -> np.ndarray:
    seen = set()
    rows = []
    for h, r, t in split:
        row = (vocab.entity_ids[h], vocab.relation_ids[r], vocab.entity_ids[t])
        if row not in seen:
            seen.add(row)
            rows.append(row)
    return _as_triple_array(rows)


def _read_triple_file(path, column_order: str) -> list[tuple[str, str, str]]:
    triples = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.rstrip("\r\n")
            if not line.strip():
                continue
            fields = line.split("\t")
            if len(fields) != 3:
                raise ParseError(f"expected 3 tab-separated fields, got {len(fields)}", path, lineno)
            if column_order == "HRT":
                h, r, t = fields
            else:
                h, t, r = fields
            if INVERSE_MARKER in r:
                raise ParseError(f"relation name {r!r} uses the reserved marker {INVERSE_MARKER!r}", path, lineno)
            triples.append((h, r, t))
    return triples


def load_dataset(train_path, valid_path, test_path, column_order: str = "HRT") -> Graph:
    """Load three triple files into a :class:`Graph`.

    The vocabulary covers all splits (ids assigned in order of first
    appearance, train first) while the out-index covers training triples only.
    """
    column_order = str(column_order).upper()
    if column_order not in COLUMN_ORDERS:
        raise ConfigError(f"unknown column_order {column_order!r}; expected one of {COLUMN_ORDERS}")
    splits = [_read_triple_file(p, column_order) for p in (train_path, valid_path, test_path)]
    if not splits[0]:
        raise ValidationError(f"training split {train_path} is empty")
    entities, relations = _collect_names(splits)
    vocab = Vocab.build(entities, relations)
    arrays = [_encode(split, vocab) for split in splits]
    for name, raw, arr in zip(("train", "valid", "test"), splits, arrays):
        if len(raw) != len(arr):
            logger.warning("%s: dropped %d duplicate triples", name, len(raw) - len(arr))
    graph = Graph(vocab, *arrays)
    logger.info(
        "loaded dataset: %d entities, %d relations (%d with inverses), "
        "%d train / %d valid / %d test triples",
        vocab.num_entities, vocab.num_original_relations, vocab.num_relations,
        len(graph.train), len(graph.valid), len(graph.test),
    )
    return graph


@dataclass
class TypeSystem:
    domains: list[str] = field(default_factory=list)
    types: list[str] = field(default_factory=list)
    entity_domains: dict[int, frozenset] = field(default_factory=dict)
    domain_types: dict[tuple[int, int], frozenset] = field(default_factory=dict)
    relation_domain: dict[int, int] = field(default_factory=dict)
    skipped_entities: int = 0

    @property
    def num_types(self) -> int:
        return len(self.types)

    def is_empty(self) -> bool:
        return not self.types

    def entity_types(self, e: int) -> list[int]:
        """All type ids of ``e`` across its domains, ascending."""
        out = set()
        for d in self.entity_domains.get(e, ()):
            out |= self.domain_types.get((e, d), frozenset())
        return sorted(out)


def split_type_string(type_string: str) -> tuple[str, str]:
    """``'/film/actor'`` -> ``('/film', '/film/actor')``."""
    if not type_string.startswith("/") or len(type_string) < 2:
        raise ValueError(f"type {type_string!r} must start with '/'")
    head = type_string[1:].split("/", 1)[0]
    if not head:
        raise ValueError(f"type {type_string!r} has an empty domain segment")
    return "/" + head, type_string


def relation_domain_name(relation_name: str) -> str | None:
    """First slash segment of a relation name, or None for names without one."""
    name = relation_name[: -len(INVERSE_MARKER)] if relation_name.endswith(INVERSE_MARKER) else relation_name
    try:
        return split_type_string(name)[0]
    except ValueError:
        return None


def type_system_from_mapping(entity_types: dict[str, Iterable[str]], vocab: Vocab) -> TypeSystem:
    """Build a :class:`TypeSystem` from ``entity name -> type strings``."""
    domain_ids: dict[str, int] = {}
    type_ids: dict[str, int] = {}
    entity_domains: dict[int, set] = {}
    domain_types: dict[tuple[int, int], set] = {}
    skipped = 0
    for name, type_strings in entity_types.items():
        if name not in vocab.entity_ids:
            skipped += 1
            continue
        e = vocab.entity_ids[name]
        for ts in type_strings:
            dom, typ = split_type_string(ts)
            d = domain_ids.setdefault(dom, len(domain_ids))
            t = type_ids.setdefault(typ, len(type_ids))
            entity_domains.setdefault(e, set()).add(d)
            domain_types.setdefault((e, d), set()).add(t)

    relation_domain: dict[int, int] = {}
    if type_ids:
        n = vocab.num_original_relations
        for r in range(n):
            dom = relation_domain_name(vocab.relation_names[r])
            if dom is None:
                continue
            d = domain_ids.setdefault(dom, len(domain_ids))
            relation_domain[r] = d
            relation_domain[vocab.inverse_of[r]] = d
    return TypeSystem(
        domains=list(domain_ids),
        types=list(type_ids),
        entity_domains={e: frozenset(ds) for e, ds in entity_domains.items()},
        domain_types={k: frozenset(v) for k, v in domain_types.items()},
        relation_domain=relation_domain,
        skipped_entities=skipped,
    )


def load_type_system(entity_type_path, graph: Graph) -> TypeSystem:
    """Read ``entity<TAB>type1<TAB>type2...`` lines of slash-delimited type strings."""
    mapping: dict[str, list[str]] = {}
    path = Path(entity_type_path)
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.rstrip("\r\n")
            if not line.strip():
                continue
            name, *type_strings = line.split("\t")
            for ts in type_strings:
                ts = ts.strip()
                if not ts:
                    continue
                try:
                    split_type_string(ts)
                except ValueError as exc:
                    raise ParseError(str(exc), path, lineno) from None
                mapping.setdefault(name, []).append(ts)
    types = type_system_from_mapping(mapping, graph.vocab)
    if types.skipped_entities:
        logger.warning("%s: skipped %d entities absent from the vocabulary", path, types.skipped_entities)
    logger.info("loaded type system: %d domains, %d types, %d typed entities",
                len(types.domains), len(types.types), len(types.entity_domains))
    return types
