import numpy as np
import pytest

from helpers import random_params, random_types
from oracles import converted
from pathkg.converter import EntityConverter, conversion_plan, select_domain
from pathkg.errors import ConfigError
from pathkg.kg import Graph, TypeSystem, type_system_from_mapping
from pathkg.model import Gradients

ROWS = [("a", "/d0/r", "b"), ("b", "/d1/s", "c"), ("c", "/d2/u", "a"), ("a", "plain", "c")]


@pytest.fixture
def graph():
    return Graph.from_names(ROWS)


def test_domain_selection_and_fallbacks(graph):
    v = graph.vocab
    types = type_system_from_mapping({"a": ["/d0/x", "/d0/y", "/d1/z"], "b": ["/d2/w"]}, v)
    a, b, c = v.entity("a"), v.entity("b"), v.entity("c")
    r_d0, r_d1 = v.relation("/d0/r"), v.relation("/d1/s")
    plain = v.relation("plain")
    assert select_domain(types, a, r_d0) == types.domains.index("/d0")
    assert select_domain(types, a, plain) is None
    tids, w = conversion_plan(types, a, r_d0)
    assert sorted(types.types[t] for t in tids) == ["/d0/x", "/d0/y"] and w.tolist() == [1.0, 1.0]
    tids, w = conversion_plan(types, a, r_d0, normalize=True)
    assert w.tolist() == [0.5, 0.5]
    tids, w = conversion_plan(types, b, r_d1)
    assert [types.types[t] for t in tids] == ["/d2/w"] and w.tolist() == [1.0]
    tids, w = conversion_plan(types, a, plain)
    assert len(tids) == 3 and np.allclose(w, 1 / 3)
    assert conversion_plan(types, c, r_d0) is None
    # inverse relations share the domain
    assert select_domain(types, a, v.inverse_of[r_d0]) == select_domain(types, a, r_d0)


def test_ec1_requires_types():
    with pytest.raises(ConfigError):
        EntityConverter("ec1", TypeSystem())
    with pytest.raises(ConfigError):
        EntityConverter("ec3")


@pytest.mark.parametrize("mode", ["ec1", "ec2"])
def test_batched_matches_scalar(graph, mode):
    v = graph.vocab
    rng = np.random.default_rng(5)
    types = random_types(v, rng) if mode == "ec1" else None
    if types is not None and types.is_empty():
        types = type_system_from_mapping({"a": ["/d0/x"]}, v)
    p = random_params(v, 4, mode, types, seed=3)
    conv = EntityConverter(mode, types)
    ents = rng.integers(v.num_entities, size=20)
    rels = rng.integers(v.num_relations, size=20)
    batched = conv.forward(p, ents, rels)
    for i, (e, r) in enumerate(zip(ents.tolist(), rels.tolist())):
        np.testing.assert_allclose(batched[i], converted(p, e, r, types), rtol=0, atol=1e-12)
        np.testing.assert_allclose(conv.convert(p, e, r), batched[i], rtol=0, atol=1e-12)


@pytest.mark.parametrize("mode", ["ec1", "ec2"])
def test_backward_matches_finite_differences(graph, mode):
    v = graph.vocab
    rng = np.random.default_rng(9)
    types = type_system_from_mapping({"a": ["/d0/x", "/d1/z"], "b": ["/d2/w", "/d1/q"]}, v) \
        if mode == "ec1" else None
    p = random_params(v, 3, mode, types, seed=1)
    conv = EntityConverter(mode, types)
    ents = np.array([0, 1, 2, 1])
    rels = np.array([0, 1, 2, 5])
    G = rng.normal(size=(4, 3))
    grads = Gradients()
    conv.backward(p, ents, rels, G, grads)
    dense = grads.to_dense(p)

    def loss():
        return float((conv.forward(p, ents, rels) * G).sum())

    eps = 1e-6
    for name, arr in p.families().items():
        if name in ("W_h", "W_i", "relation"):
            continue
        num = np.zeros_like(arr)
        for idx in np.ndindex(arr.shape):
            old = arr[idx]
            arr[idx] = old + eps
            lp = loss()
            arr[idx] = old - eps
            lm = loss()
            arr[idx] = old
            num[idx] = (lp - lm) / (2 * eps)
        np.testing.assert_allclose(dense[name], num, atol=1e-7)


def test_tags(graph):
    v = graph.vocab
    types = type_system_from_mapping({"a": ["/d0/x"]}, v)
    conv = EntityConverter("ec1", types)
    a, b = v.entity("a"), v.entity("b")
    assert conv.tags(a, v.relation("/d0/r")) == (("types", 0),)
    assert conv.tags(b, 0) == (("entity", b),)
    assert EntityConverter("ec2").tags(a, 3) == (("entity", a), ("projection", 3))
