"""Grounded path extraction with resource-allocation weights and the path cache.

Resource flow: a unit of resource starts at the source entity; a node holding
``R`` that follows relation ``r`` hands ``R / |neighbors(node, r)|`` to each
successor.  The weight of a grounded path is the resource delivered along its
exact node sequence, so summing the weights of all groundings of one relation
sequence recovers the classic relation-path reliability.

Paths are simple: intermediates are distinct and never equal to either
endpoint.
"""

from __future__ import annotations

import hashlib
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterator

import numpy as np

from .errors import ParseError, ValidationError
from .kg import Graph, Triple, Vocab

logger = logging.getLogger(__name__)

MAX_PATH_LEN = 3
CACHE_FORMAT = "1"


@dataclass(frozen=True)
class GroundedPath:
    relations: tuple[int, ...]
    entities: tuple[int, ...]
    source: int
    target: int
    alpha: float = 1.0
    confidence: float = 1.0

    def __post_init__(self):
        if len(self.relations) < 1:
            raise ValueError("a path needs at least one relation")
        if len(self.entities) != len(self.relations) - 1:
            raise ValueError(
                f"{len(self.relations)} relations need {len(self.relations) - 1} intermediate entities, "
                f"got {len(self.entities)}"
            )

    def __len__(self) -> int:
        return len(self.relations)

    def hops(self) -> list[tuple[int, int, int]]:
        nodes = (self.source, *self.entities, self.target)
        return [(nodes[i], r, nodes[i + 1]) for i, r in enumerate(self.relations)]

    def sort_key(self):
        return (-self.alpha, interleave(self.relations, self.entities))

    def identity(self) -> tuple:
        """Everything but the weights; equal identities mean the same grounded path."""
        return (self.source, self.relations, self.entities, self.target)


@dataclass
class PathSet:
    forward: list[GroundedPath] = field(default_factory=list)
    backward: list[GroundedPath] = field(default_factory=list)

    @classmethod
    def from_forward(cls, paths, vocab: Vocab) -> "PathSet":
        paths = list(paths)
        return cls(paths, [invert_path(p, vocab) for p in paths])

    def __len__(self) -> int:
        return len(self.forward)

    def __bool__(self) -> bool:
        return bool(self.forward)


def interleave(relations, entities) -> tuple[int, ...]:
    out = [relations[0]]
    for e, r in zip(entities, relations[1:]):
        out.extend((e, r))
    return tuple(out)


def invert_path(p: GroundedPath, vocab: Vocab) -> GroundedPath:
    inv = vocab.inverse_of
    return replace(
        p,
        relations=tuple(inv[r] for r in reversed(p.relations)),
        entities=tuple(reversed(p.entities)),
        source=p.target,
        target=p.source,
    )


def _check_len(max_len: int):
    if not 1 <= max_len <= MAX_PATH_LEN:
        raise ValidationError(f"max_len must be in 1..{MAX_PATH_LEN}, got {max_len}")


def walk_from(graph: Graph, h: int, max_len: int) -> Iterator[GroundedPath]:
    """Every simple grounded path leaving ``h`` with at most ``max_len`` relations."""
    _check_len(max_len)

    def rec(node, rels, ents, resource):
        for r, succ in graph.edges_from(node):
            share = resource / len(succ)
            path_rels = rels + (r,)
            for nxt in succ:
                if nxt == h or nxt in ents:
                    continue
                yield GroundedPath(path_rels, ents, h, nxt, share)
                if len(path_rels) < max_len:
                    yield from rec(nxt, path_rels, ents + (nxt,), share)

    yield from rec(h, (), (), 1.0)


def walk_to(graph: Graph, t: int, max_len: int) -> Iterator[GroundedPath]:
    """Every simple grounded path arriving at ``t`` with at most ``max_len`` relations.

    Weights are computed source-first so they agree bit-for-bit with
    :func:`walk_from`.
    """
    _check_len(max_len)
    inv = graph.vocab.inverse_of

    def weight(nodes, rels):
        alpha = 1.0
        for src, rel in zip(nodes, rels):
            alpha = alpha / graph.out_degree(src, rel)
        return alpha

    def rec(node, rels, ents):
        # (rels, ents) is the suffix from `node` to t; step back one hop
        for r_back, preds in graph.edges_from(node):
            path_rels = (inv[r_back],) + rels
            path_ents = (node,) + ents if rels else ()
            for prev in preds:
                if prev == t or prev in path_ents:
                    continue
                yield GroundedPath(path_rels, path_ents, prev, t, weight((prev, *path_ents), path_rels))
                if len(path_rels) < max_len:
                    yield from rec(prev, path_rels, path_ents)

    yield from rec(t, (), ())


def _select(paths, max_paths: int, exclude_relation: int | None) -> list[GroundedPath]:
    if exclude_relation is not None:
        paths = [p for p in paths if p.relations != (exclude_relation,)]
    return sorted(paths, key=GroundedPath.sort_key)[:max_paths]


def _group_by(paths, key) -> dict[int, list[GroundedPath]]:
    groups: dict[int, list[GroundedPath]] = {}
    for p in paths:
        groups.setdefault(key(p), []).append(p)
    return groups


def paths_from(graph: Graph, h: int, max_len: int, max_paths: int,
               exclude_relation: int | None = None) -> dict[int, list[GroundedPath]]:
    """Top-weighted paths from ``h`` to every reachable target."""
    groups = _group_by(walk_from(graph, h, max_len), lambda p: p.target)
    return {t: sel for t, ps in groups.items() if (sel := _select(ps, max_paths, exclude_relation))}


def paths_to(graph: Graph, t: int, max_len: int, max_paths: int,
             exclude_relation: int | None = None) -> dict[int, list[GroundedPath]]:
    """Top-weighted paths from every source that reaches ``t``."""
    groups = _group_by(walk_to(graph, t, max_len), lambda p: p.source)
    return {h: sel for h, ps in groups.items() if (sel := _select(ps, max_paths, exclude_relation))}


def extract_paths_pcra(graph: Graph, h: int, t: int, max_len: int = 2, max_paths: int = 20,
                       exclude_relation: int | None = None) -> PathSet:
    """Grounded paths from ``h`` to ``t`` ranked by resource-flow weight.

    Keeps the ``max_paths`` heaviest paths (ties broken by the interleaved
    relation/entity id sequence).  ``exclude_relation`` drops the length-1 path
    made of exactly that relation.
    """
    _check_len(max_len)
    if h == t:
        return PathSet()
    found = [p for p in walk_from(graph, h, max_len) if p.target == t]
    return PathSet.from_forward(_select(found, max_paths, exclude_relation), graph.vocab)


def _index_heads(args):
    graph, heads, triples_by_head, max_len, max_paths, exclude_direct = args
    out = {}
    for h in heads:
        groups = _group_by(walk_from(graph, h, max_len), lambda p: p.target)
        for tr in triples_by_head[h]:
            candidates = groups.get(tr.tail, []) if tr.tail != h else []
            excl = tr.relation if exclude_direct else None
            out[tr] = _select(candidates, max_paths, excl)
    return out


def build_path_index(graph: Graph, max_len: int = 2, max_paths: int = 20, exclude_direct: bool = True,
                     cache_path=None, workers: int = 1) -> dict[Triple, PathSet]:
    """PathSet for every training triple, optionally persisted to ``cache_path``."""
    _check_len(max_len)
    triples = [Triple(*map(int, row)) for row in graph.train]
    by_head: dict[int, list[Triple]] = {}
    for tr in triples:
        by_head.setdefault(tr.head, []).append(tr)
    heads = sorted(by_head)

    if workers > 1 and len(heads) > 1:
        chunks = [heads[i::workers] for i in range(workers)]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(_index_heads, [
                (graph, chunk, {h: by_head[h] for h in chunk}, max_len, max_paths, exclude_direct)
                for chunk in chunks
            ]))
        forward = {}
        for part in parts:
            forward.update(part)
    else:
        forward = _index_heads((graph, heads, by_head, max_len, max_paths, exclude_direct))

    index = {tr: PathSet.from_forward(forward[tr], graph.vocab) for tr in triples}
    logger.info("path index: %d triples, %d paths, %d triples without paths",
                len(index), sum(len(ps) for ps in index.values()),
                sum(1 for ps in index.values() if not ps))
    if cache_path is not None:
        write_path_cache(cache_path, index, graph,
                         meta={"max_len": max_len, "max_paths": max_paths, "exclude_direct": int(exclude_direct)})
    return index


# -- cache file -------------------------------------------------------------

def graph_digest(graph: Graph) -> str:
    h = hashlib.sha256()
    h.update(np.ascontiguousarray(graph.train, dtype="<i8").tobytes())
    h.update(str(graph.vocab.num_entities).encode())
    h.update(str(graph.vocab.num_relations).encode())
    return h.hexdigest()


def write_path_cache(path, index: dict[Triple, PathSet], graph: Graph, meta: dict | None = None):
    """Write forward paths in train-split order; the ``.meta`` sidecar records how they were built."""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    order = [Triple(*map(int, row)) for row in graph.train]
    with open(tmp, "w", encoding="utf-8") as f:
        for tr in order:
            pset = index.get(tr, PathSet())
            f.write(f"{tr.head}\t{tr.relation}\t{tr.tail}\t{len(pset.forward)}\n")
            for p in pset.forward:
                seq = " ".join(str(x) for x in interleave(p.relations, p.entities))
                f.write(f"{format(p.alpha, '.17g')} {seq}\n")
    os.replace(tmp, path)
    info = {"format": CACHE_FORMAT, "graph": graph_digest(graph), "records": len(order)}
    info.update(meta or {})
    meta_path = path.with_name(path.name + ".meta")
    meta_path.write_text("".join(f"{k}={v}\n" for k, v in info.items()), encoding="utf-8")


def read_cache_meta(path) -> dict[str, str] | None:
    meta_path = Path(path).with_name(Path(path).name + ".meta")
    if not meta_path.exists():
        return None
    out = {}
    for line in meta_path.read_text(encoding="utf-8").splitlines():
        if "=" in line:
            k, v = line.split("=", 1)
            out[k.strip()] = v.strip()
    return out


def cache_is_current(path, graph: Graph, max_len: int, max_paths: int, exclude_direct: bool) -> bool:
    if not Path(path).exists():
        return False
    meta = read_cache_meta(path)
    expected = {
        "format": CACHE_FORMAT, "graph": graph_digest(graph), "max_len": str(max_len),
        "max_paths": str(max_paths), "exclude_direct": str(int(exclude_direct)),
    }
    return meta is not None and all(meta.get(k) == v for k, v in expected.items())


def read_path_cache(path, vocab: Vocab) -> dict[Triple, PathSet]:
    index: dict[Triple, PathSet] = {}
    with open(path, encoding="utf-8") as f:
        lines = iter(enumerate(f, start=1))
        for lineno, line in lines:
            if not line.strip():
                continue
            fields = line.rstrip("\n").split("\t")
            if len(fields) != 4:
                raise ParseError("expected 'h<TAB>r<TAB>t<TAB>k' record header", path, lineno)
            h, r, t, k = map(int, fields)
            forward = []
            for _ in range(k):
                lineno, row = next(lines)
                parts = row.split()
                alpha, ids = float(parts[0]), [int(x) for x in parts[1:]]
                if len(ids) % 2 != 1:
                    raise ParseError("path must alternate relation/entity ids", path, lineno)
                forward.append(GroundedPath(tuple(ids[0::2]), tuple(ids[1::2]), h, t, alpha))
            index[Triple(h, r, t)] = PathSet.from_forward(forward, vocab)
    return index
