"""Synthetic knowledge graph with one planted composition rule ``r3(x, y) <= r1(x, z) & r2(z, y)``."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .kg import Graph, Triple
from .rules import HornRule, RuleIndex, write_rule_file


@dataclass
class PlantedKG:
    graph: Graph
    held_out: list[Triple]
    rules: RuleIndex
    implied: int

    def write(self, directory) -> Path:
        """Dump ``train/valid/test.txt`` and ``rules.tsv`` in the on-disk formats."""
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        en, rn = self.graph.vocab.entity_names, self.graph.vocab.relation_names
        for name, rows in (("train", self.graph.train), ("valid", self.graph.valid), ("test", self.graph.test)):
            with open(d / f"{name}.txt", "w", encoding="utf-8") as f:
                for h, r, t in rows.tolist():
                    f.write(f"{en[h]}\t{rn[r]}\t{en[t]}\n")
        write_rule_file(d / "rules.tsv", self.rules, self.graph.vocab)
        return d


def planted_rule_kg(num_entities: int = 200, num_relations: int = 8, chain_edges: int = 200,
                    holdout: float = 0.2, noise_edges: int = 100, seed: int = 0) -> PlantedKG:
    """Random ``r1`` and ``r2`` edges (``chain_edges`` each), every implied ``r3`` edge split
    train/test by ``holdout``, and ``noise_edges`` random edges for each remaining relation.

    The rule confidence is the fraction of implied edges kept in training,
    which is what a miner would report on the training split.
    """
    if num_relations < 3:
        raise ValueError("need at least r1, r2 and r3")
    rng = np.random.default_rng(seed)

    def random_edges(count):
        edges = set()
        while len(edges) < count:
            a, b = rng.integers(num_entities, size=2)
            if a != b:
                edges.add((int(a), int(b)))
        return sorted(edges)

    r1 = random_edges(chain_edges)
    r2 = random_edges(chain_edges)
    succ: dict[int, list[int]] = {}
    for z, y in r2:
        succ.setdefault(z, []).append(y)
    implied = sorted({(x, y) for x, z in r1 for y in succ.get(z, ()) if x != y})
    order = rng.permutation(len(implied))
    n_test = int(round(holdout * len(implied)))
    test_pairs = [implied[i] for i in sorted(order[:n_test])]
    train_pairs = [implied[i] for i in sorted(order[n_test:])]

    train = [(x, 0, z) for x, z in r1] + [(z, 1, y) for z, y in r2] + [(x, 2, y) for x, y in train_pairs]
    for r in range(3, num_relations):
        train += [(a, r, b) for a, b in random_edges(noise_edges)]
    test = [(x, 2, y) for x, y in test_pairs]

    entities = [f"e{i}" for i in range(num_entities)]
    relations = [f"r{i + 1}" for i in range(num_relations)]
    named = lambda rows: [(entities[h], relations[r], entities[t]) for h, r, t in rows]  # noqa: E731
    graph = Graph.from_names(named(train), (), named(test))
    vocab = graph.vocab
    ids = [vocab.relation(n) for n in ("r1", "r2", "r3")]
    conf = len(train_pairs) / len(implied)
    rules = RuleIndex.from_rules([HornRule(ids[0], ids[1], ids[2], conf)])
    held = [Triple(*map(int, row)) for row in graph.test]
    return PlantedKG(graph, held, rules, len(implied))
