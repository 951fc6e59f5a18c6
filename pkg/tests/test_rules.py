import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import compose as oracle_compose
from pathkg.errors import ParseError
from pathkg.kg import Graph, Vocab
from pathkg.paths import GroundedPath
from pathkg.rules import HornRule, RuleIndex, compose_path, parse_rule_file, write_rule_file

NAMES = ["r1", "r2", "r3", "r4", "a", "b", "c", "has_sibling", "person_born_in_city"]


@pytest.fixture
def vocab():
    return Vocab.build([f"e{i}" for i in range(8)], NAMES)


def rid(vocab, name):
    return vocab.relation(name)


def test_full_chain_collapses_to_one_relation(vocab):
    r1, r2, r3, r4, a, b, c = (rid(vocab, n) for n in ("r1", "r2", "r3", "r4", "a", "b", "c"))
    c1, c2, c3 = 0.9, 0.85, 0.75
    rules = RuleIndex.from_rules([HornRule(r1, r2, a, c1), HornRule(a, r3, b, c2), HornRule(b, r4, c, c3)])
    p = GroundedPath((r1, r2, r3, r4), (1, 2, 3), 0, 4)
    out = compose_path(p, rules)
    assert out.relations == (c,)
    assert out.entities == ()
    assert out.confidence == c1 * c2 * c3
    assert (out.source, out.target, out.alpha) == (0, 4, p.alpha)


def test_interior_window_keeps_flanking_hops(vocab):
    r1, r2, r3, r4, a = (rid(vocab, n) for n in ("r1", "r2", "r3", "r4", "a"))
    rules = RuleIndex.from_rules([HornRule(r2, r3, a, 0.8)])
    p = GroundedPath((r1, r2, r3, r4), (1, 2, 3), 0, 4)
    out = compose_path(p, rules)
    assert out.relations == (r1, a, r4)
    assert out.entities == (1, 3)
    assert out.hops() == [(0, r1, 1), (1, a, 3), (3, r4, 4)]
    assert out.confidence == 0.8


def test_sibling_birthplace_example(vocab):
    sib, born = rid(vocab, "has_sibling"), rid(vocab, "person_born_in_city")
    rules = RuleIndex.from_rules([HornRule(sib, born, born, 1.0)])
    out = compose_path(GroundedPath((sib, born), (1,), 0, 2), rules)
    assert out.relations == (born,)
    assert out.confidence == 1.0


def test_no_match_returns_same_object(vocab):
    p = GroundedPath((0, 1), (3,), 2, 4)
    assert compose_path(p, RuleIndex()) is p
    assert compose_path(p, RuleIndex.from_rules([HornRule(1, 0, 2, 0.9)])) is p


def test_index_keeps_best_rule_per_body():
    idx = RuleIndex()
    assert idx.add(HornRule(0, 1, 2, 0.8), 0.7)
    idx.add(HornRule(0, 1, 3, 0.75), 0.7)
    assert idx.lookup(0, 1).head == 2
    idx.add(HornRule(0, 1, 4, 0.95), 0.7)
    assert not idx.add(HornRule(1, 1, 4, 0.7), 0.7)
    assert idx.lookup(0, 1).head == 4 and len(idx) == 1
    assert idx.skipped_low_confidence == 1
    with pytest.raises(ValueError):
        HornRule(0, 1, 2, 1.5)


def test_native_file(tmp_path, vocab):
    f = tmp_path / "rules.tsv"
    f.write_text("# body1 body2 head conf\nr1\tr2\ta\t0.9\nr2\tr3\tb\t0.7\nr1\tghost\ta\t0.99\n",
                 encoding="utf-8")
    idx = parse_rule_file(f, vocab)
    assert len(idx) == 1 and idx.skipped_unknown == 1 and idx.skipped_low_confidence == 1
    assert idx.lookup(rid(vocab, "r1"), rid(vocab, "r2")).confidence == 0.9
    out = tmp_path / "again.tsv"
    write_rule_file(out, idx, vocab)
    assert list(parse_rule_file(out, vocab)) == list(idx)


def test_amie_export(tmp_path, vocab):
    f = tmp_path / "amie.tsv"
    f.write_text(
        "Rule\tHead Coverage\tStd Confidence\tPCA Confidence\n"
        "?a  r1  ?b   ?b  r2  ?c   =>  ?a  a  ?c\t0.1\t0.6\t0.8\n"
        "?b  r3  ?c   ?a  r2  ?b   =>  ?a  b  ?c\t0.1\t0.5\t0.9\n"
        "?a  r1  ?b   ?a  r2  ?b   =>  ?a  c  ?b\t0.1\t0.9\t0.99\n",
        encoding="utf-8")
    idx = parse_rule_file(f, vocab)
    assert idx.lookup(rid(vocab, "r1"), rid(vocab, "r2")).head == rid(vocab, "a")
    assert idx.lookup(rid(vocab, "r2"), rid(vocab, "r3")).confidence == 0.9
    assert len(idx) == 2
    std = parse_rule_file(f, vocab, min_confidence=0.55, amie_confidence_column=2)
    assert len(std) == 1 and std.lookup(rid(vocab, "r1"), rid(vocab, "r2")).confidence == 0.6


@pytest.mark.parametrize("line", ["r1\tr2\ta\tabc\n", "r1\tr2\ta\t1.2\n", "r1\tr2\ta\n"])
def test_malformed_rules(tmp_path, vocab, line):
    f = tmp_path / "bad.tsv"
    f.write_text(line, encoding="utf-8")
    with pytest.raises(ParseError):
        parse_rule_file(f, vocab)


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 10**6), st.integers(1, 6))
def test_matches_reference_composition(seed, length):
    rnd = random.Random(seed)
    rules = {}
    for _ in range(rnd.randint(0, 6)):
        rules[(rnd.randrange(4), rnd.randrange(4))] = (rnd.randrange(4), rnd.choice([0.75, 0.8, 0.9, 1.0]))
    index = RuleIndex.from_rules([HornRule(a, b, h, c) for (a, b), (h, c) in rules.items()])
    rels = tuple(rnd.randrange(4) for _ in range(length))
    ents = tuple(range(10, 10 + length - 1))
    p = GroundedPath(rels, ents, 0, 99, 0.5)
    out = compose_path(p, index)
    assert (out.relations, out.entities, out.confidence) == oracle_compose(rels, ents, 1.0, rules)
    assert len(out.relations) <= len(rels)
    assert out.alpha == p.alpha
    assert 0 < out.confidence <= 1


def test_graph_vocab_rules(toy_graph, tmp_path):
    f = tmp_path / "r.tsv"
    f.write_text("/people/sibling\t/people/born_in\t/people/born_in\t1.0\n", encoding="utf-8")
    idx = parse_rule_file(f, toy_graph.vocab)
    assert len(idx) == 1
    assert isinstance(toy_graph, Graph)
