"""Shared builders for parameter sets, type systems and loss instances in tests."""

import random

import numpy as np

from oracles import batch_loss, random_named_graph
from pathkg.config import Config
from pathkg.converter import EntityConverter
from pathkg.errors import NegativeSamplingError
from pathkg.kg import Graph, Triple, type_system_from_mapping
from pathkg.model import init_params
from pathkg.paths import build_path_index
from pathkg.rules import HornRule, RuleIndex
from pathkg.trainer import Batch, compose_path_set, corrupt_relation, margin_losses, sample_negatives


def random_params(vocab, k, converter="ec2", types=None, seed=0, spread=0.3):
    """Initial parameters with the encoder pushed away from identity so every term is exercised."""
    rng = np.random.default_rng(seed)
    p = init_params(vocab.num_entities, vocab.num_relations, k, converter,
                    types.num_types if types is not None else 0, rng)
    p.encoder.W_h += rng.normal(0, spread, (k, k))
    p.encoder.W_i += rng.normal(0, spread, (k, k))
    if p.projection is not None:
        p.projection += rng.normal(0, spread, p.projection.shape)
    return p


def random_types(vocab, rng, domains=("/d0", "/d1", "/d2"), per_domain=3, untyped_fraction=0.2):
    mapping = {}
    for name in vocab.entity_names:
        if rng.random() < untyped_fraction:
            continue
        chosen = []
        for d in domains:
            if rng.random() < 0.6:
                chosen += [f"{d}/t{j}" for j in range(per_domain) if rng.random() < 0.6]
        if chosen:
            mapping[name] = chosen
    return type_system_from_mapping(mapping, vocab)


def as_tuples(pset):
    return [(p.relations, p.entities, p.alpha, p.confidence) for p in pset.forward]


def two_relation_graph(rnd, max_nodes, max_edges, num_relations):
    """Random graph that always uses at least two relations, so relation corruption is possible."""
    rows = set(random_named_graph(rnd, max_nodes, max_edges, num_relations))
    rows |= {("n0", "p0", "n1"), ("n1", "p1", "n2")}
    return Graph.from_names(sorted(rows))


def make_instance(seed, converter="ec2", norm="l1", negatives=1, tradeoff=0.8, k=4, rules=True):
    """Random small graph, parameters and one batch with composed paths."""
    rnd = random.Random(seed)
    g = two_relation_graph(rnd, 9, 22, 3)
    rng = np.random.default_rng(seed)
    types = None
    if converter == "ec1":
        types = random_types(g.vocab, rng)
        if types.is_empty():
            types = random_types(g.vocab, rng, untyped_fraction=0.0)
    p = random_params(g.vocab, k, converter, types, seed=seed)
    index = build_path_index(g, 2, 4)
    rule_index = None
    if rules:
        n = g.vocab.num_original_relations
        rule_index = RuleIndex.from_rules([HornRule(0, rnd.randrange(n), rnd.randrange(n), 0.9)])
    positives, sampled = [], []
    for row in g.train.tolist():
        try:
            sampled.append(sample_negatives(g, Triple(*row), rng))
        except NegativeSamplingError:
            continue
        positives.append(Triple(*row))
        if len(positives) == 8:
            break
    neg_rels = [[r] + [corrupt_relation(rng, tr.relation, g.vocab.num_original_relations)
                       for _ in range(negatives - 1)] for tr, (_, r) in zip(positives, sampled)]
    psets = [compose_path_set(index[tr], rule_index, g.vocab) for tr in positives]
    batch = Batch(positives, [n for n, _ in sampled], neg_rels, psets)
    cfg = Config(k=k, norm=norm, converter=converter, tradeoff=tradeoff, margin_triple=1.5, margin_path=1.5,
                 grad_clip=None, relation_negatives=negatives)
    return g, types, p, batch, cfg


def oracle_value(g, types, p, batch, cfg):
    return batch_loss(p, batch.positives, batch.negatives, batch.negative_relations,
                      [as_tuples(ps) for ps in batch.path_sets], cfg, g.vocab.inverse_of, types)


def numeric_gradient_check(g, types, p, batch, cfg, eps=1e-6, coords=12, directions=2, rng=None):
    """Worst relative error between analytic and central-difference gradients, per family."""
    rng = rng or np.random.default_rng(0)
    conv = EntityConverter(cfg.converter, types)
    dense = margin_losses(p, batch, cfg, conv, g.vocab.inverse_of).grads.to_dense(p)

    def value():
        return margin_losses(p, batch, cfg, conv, g.vocab.inverse_of).loss

    worst = {}
    for name, arr in p.families().items():
        grad = dense[name]
        checks = []
        touched = np.argwhere(grad != 0)
        picks = [tuple(x) for x in touched[rng.permutation(len(touched))[:coords]]]
        picks += [tuple(int(rng.integers(s)) for s in arr.shape) for _ in range(2)]
        for idx in picks:
            old = arr[idx]
            arr[idx] = old + eps
            lp = value()
            arr[idx] = old - eps
            lm = value()
            arr[idx] = old
            checks.append(((lp - lm) / (2 * eps), grad[idx]))
        for _ in range(directions):
            v = rng.normal(size=arr.shape)
            v /= np.linalg.norm(v)
            base = arr.copy()
            arr[...] = base + eps * v
            lp = value()
            arr[...] = base - eps * v
            lm = value()
            arr[...] = base
            checks.append(((lp - lm) / (2 * eps), float((grad * v).sum())))
        err = 0.0
        for num, ana in checks:
            scale = max(abs(num), abs(ana))
            if scale > 1e-7:
                err = max(err, abs(num - ana) / scale)
            else:
                err = max(err, abs(num - ana))
        worst[name] = err
    return worst
