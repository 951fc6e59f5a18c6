import random
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import as_tuples, make_instance, numeric_gradient_check, oracle_value, random_params, two_relation_graph
from oracles import e2
from pathkg.config import Config
from pathkg.converter import EntityConverter
from pathkg.errors import NegativeSamplingError, NonFiniteLossError
from pathkg.kg import Graph, Triple
from pathkg.model import Gradients
from pathkg.paths import GroundedPath, PathSet, build_path_index
from pathkg.rules import HornRule, RuleIndex
from pathkg.synthetic import planted_rule_kg
from pathkg.trainer import (CALL_COUNTS, apply_sgd, compose_path_set, corrupt_relation, energy_path_set,
                            energy_triple, margin_losses, path_weights, read_loss_csv, sample_negatives, train,
                            write_loss_csv)


@pytest.mark.parametrize("converter", ["ec1", "ec2"])
@pytest.mark.parametrize("norm", ["l1", "l2"])
@pytest.mark.parametrize("seed", range(4))
def test_loss_matches_scalar_oracle(converter, norm, seed):
    g, types, p, batch, cfg = make_instance(seed, converter, norm, negatives=2)
    res = margin_losses(p, batch, cfg, EntityConverter(converter, types), g.vocab.inverse_of)
    expected, _ = oracle_value(g, types, p, batch, cfg)
    assert res.loss == pytest.approx(expected, rel=1e-10, abs=1e-10)
    assert res.loss == pytest.approx(res.l1 + cfg.tradeoff * res.l2, rel=1e-12)


@pytest.mark.parametrize("converter", ["ec1", "ec2"])
@pytest.mark.parametrize("norm", ["l1", "l2"])
def test_gradients_match_finite_differences(converter, norm):
    done = 0
    for seed in range(40):
        g, types, p, batch, cfg = make_instance(seed, converter, norm)
        _, kink = oracle_value(g, types, p, batch, cfg)
        if kink < 1e-3:
            continue
        worst = numeric_gradient_check(g, types, p, batch, cfg)
        assert max(worst.values()) <= 1e-4, worst
        done += 1
        if done == 3:
            break
    assert done == 3


def test_energies_against_oracle():
    g, types, p, batch, cfg = make_instance(1)
    tr = batch.positives[0]
    d = p.entity[tr.head] + p.relation[tr.relation] - p.entity[tr.tail]
    assert energy_triple(p, tr, "l1") == pytest.approx(np.abs(d).sum(), abs=1e-12)
    assert energy_triple(p, tr, "l2") == pytest.approx(np.linalg.norm(d), abs=1e-12)
    for ps in batch.path_sets:
        if ps:
            value = energy_path_set(p, tr.relation, ps.forward, "l1", EntityConverter("ec2"))
            assert value == pytest.approx(e2(p, tr.relation, as_tuples(ps), "l1")[0], abs=1e-12)
    assert energy_path_set(p, 0, [], "l1") == 0.0


def test_path_weights():
    paths = [GroundedPath((0,), (), 0, 1, 0.5), GroundedPath((1,), (), 0, 1, 0.25, 0.8)]
    w = path_weights(paths)
    np.testing.assert_allclose(w, [0.5 / 0.75, 0.8 * 0.25 / 0.75])


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10**6))
def test_negatives_are_never_positive(seed):
    g = two_relation_graph(random.Random(seed), 10, 40, 3)
    rng = np.random.default_rng(seed)
    n_ent, n_rel = g.vocab.num_entities, g.vocab.num_original_relations
    for row in g.train.tolist():
        tr = Triple(*row)
        try:
            neg, r_neg = sample_negatives(g, tr, rng)
        except NegativeSamplingError:
            h, r, t = tr
            full = [all((e, r, t) in g.triples for e in range(n_ent)),
                    all((h, q, t) in g.triples for q in range(n_rel)),
                    all((h, r, e) in g.triples for e in range(n_ent))]
            assert any(full)
            continue
        assert neg not in g.triples
        assert sum(a != b for a, b in zip(neg, tr)) == 1
        assert r_neg != tr.relation and 0 <= r_neg < g.vocab.num_original_relations


def test_slot_and_relation_frequencies():
    g = planted_rule_kg(seed=1).graph
    rng = np.random.default_rng(0)
    tr = Triple(*map(int, g.train[0]))
    slots, rels = Counter(), Counter()
    n = 6000
    for _ in range(n):
        neg, r_neg = sample_negatives(g, tr, rng)
        slots[next(i for i in range(3) if neg[i] != tr[i])] += 1
        rels[r_neg] += 1
    for s in range(3):
        assert abs(slots[s] / n - 1 / 3) < 0.03
    others = g.vocab.num_original_relations - 1
    assert set(rels) == set(range(g.vocab.num_original_relations)) - {tr.relation}
    for r in rels:
        assert abs(rels[r] / n - 1 / others) < 0.03


def test_sampling_gives_up_on_saturated_graph():
    rows = [(a, "r", b) for a in "xy" for b in "xy"]
    g = Graph.from_names(rows)
    with pytest.raises(NegativeSamplingError):
        sample_negatives(g, Triple(0, 0, 1), np.random.default_rng(0))
    with pytest.raises(NegativeSamplingError):
        corrupt_relation(np.random.default_rng(0), 0, 1)


def test_zero_tradeoff_is_plain_translational_sgd():
    kg = planted_rule_kg(num_entities=40, chain_edges=40, noise_edges=20, seed=3)
    g = kg.graph
    index = build_path_index(g, 2, 5)
    cfg = Config(k=8, epochs=3, batch_size=32, tradeoff=0.0, learning_rate=0.01)
    before = CALL_COUNTS["energy_path_set"]
    with_paths = train(g, index, kg.rules, cfg)
    assert CALL_COUNTS["energy_path_set"] == before
    without = train(g, None, None, cfg)
    assert all(s.l2 == 0 for s in with_paths.trace)
    for name, arr in with_paths.params.families().items():
        assert np.array_equal(arr, without.params.families()[name])
    assert [s.loss for s in with_paths.trace] == [s.loss for s in without.trace]


def test_sgd_shrinks_only_touched_rows():
    g, types, p, batch, cfg = make_instance(2)
    q = p.copy()
    grads = Gradients()
    grads.add_rows("entity", [1], np.zeros((1, p.k)))
    apply_sgd(q, grads, lr=0.1, l1_reg=0.5)
    np.testing.assert_allclose(q.entity[1], p.entity[1] - 0.05 * np.sign(p.entity[1]))
    mask = np.ones(len(p.entity), bool)
    mask[1] = False
    assert np.array_equal(q.entity[mask], p.entity[mask])
    assert np.array_equal(q.relation, p.relation)


def test_training_is_deterministic(tmp_path):
    kg = planted_rule_kg(num_entities=40, chain_edges=40, noise_edges=20, seed=4)
    index = build_path_index(kg.graph, 2, 5)
    cfg = Config(k=8, epochs=4, batch_size=16, learning_rate=0.01)
    a = train(kg.graph, index, kg.rules, cfg)
    b = train(kg.graph, index, kg.rules, cfg)
    write_loss_csv(tmp_path / "a.csv", a.trace)
    write_loss_csv(tmp_path / "b.csv", b.trace)
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    for name in a.params.families():
        assert np.array_equal(a.params.families()[name], b.params.families()[name])
    rows = read_loss_csv(tmp_path / "a.csv")
    assert [r.loss for r in rows] == [s.loss for s in a.trace]
    assert (tmp_path / "a.csv").read_text().splitlines()[0] == "epoch,loss,l1_component,l2_component,seconds"


def test_threaded_mode_runs():
    kg = planted_rule_kg(num_entities=40, chain_edges=40, noise_edges=20, seed=4)
    index = build_path_index(kg.graph, 2, 5)
    res = train(kg.graph, index, kg.rules, Config(k=8, epochs=2, batch_size=16, workers=3))
    assert len(res.trace) == 2 and np.isfinite(res.trace[-1].loss)


def test_entities_stay_in_unit_ball():
    kg = planted_rule_kg(num_entities=40, chain_edges=40, noise_edges=20, seed=5)
    res = train(kg.graph, None, None, Config(k=8, epochs=2, batch_size=16, learning_rate=0.5, tradeoff=0))
    assert np.all(np.linalg.norm(res.params.entity, axis=1) <= 1 + 1e-12)


def test_non_finite_loss_is_reported():
    kg = planted_rule_kg(num_entities=40, chain_edges=40, noise_edges=20, seed=6)
    cfg = Config(k=4, epochs=1, tradeoff=0)
    p = random_params(kg.graph.vocab, 4)
    p.entity[:] = np.nan
    with pytest.raises(NonFiniteLossError) as info:
        train(kg.graph, None, None, cfg, params=p)
    assert info.value.epoch == 1 and info.value.batch_index == 0
    assert np.isnan(info.value.value)


def test_planted_loss_trace_mostly_decreases():
    kg = planted_rule_kg(seed=0)
    cfg = Config.preset("planted")
    index = build_path_index(kg.graph, cfg.max_path_len, cfg.max_paths)
    trace = train(kg.graph, index, kg.rules, cfg).trace
    loss = np.array([s.loss for s in trace])
    smooth = np.convolve(loss, np.ones(10) / 10, mode="valid")
    frac = float(np.mean(np.diff(smooth) <= 0))
    assert frac >= 0.95, f"smoothed loss non-increasing in {frac:.0%} of consecutive epochs"


def test_compose_path_set_inverts_after_composing():
    g, types, p, batch, cfg = make_instance(0)
    rules = RuleIndex.from_rules([HornRule(a, b, 0, 1.0) for a in range(g.vocab.num_relations)
                                  for b in range(g.vocab.num_relations)])
    for ps in batch.path_sets:
        out = compose_path_set(ps, rules, g.vocab)
        assert all(len(q.relations) == 1 for q in out.forward)
        assert [q.relations for q in out.backward] == [(g.vocab.inverse_of[q.relations[0]],) for q in out.forward]
    assert compose_path_set(PathSet(), None, g.vocab) == PathSet()


def test_zero_epochs_returns_initial_parameters():
    kg = planted_rule_kg(num_entities=40, chain_edges=40, noise_edges=20, seed=6)
    p = random_params(kg.graph.vocab, 4)
    before = p.copy()
    res = train(kg.graph, None, None, Config(k=4, epochs=0), params=p)
    assert res.trace == []
    for name, arr in before.families().items():
        assert np.array_equal(res.params.families()[name], arr)
