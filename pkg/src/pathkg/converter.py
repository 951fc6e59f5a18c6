"""Entity converters: map a path entity into the semantic space of the relation after it.

* ``ec1`` - type attention: keep the entity's types in the domain of the
  following relation and sum their embeddings.  Falls back to the mean of all
  the entity's type embeddings when the domain does not match, and to the raw
  entity embedding when the entity has no types.
* ``ec2`` - projection: ``P_r @ e`` with one k x k matrix per relation id.
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigError
from .kg import TypeSystem
from .model import Gradients, ModelParams


def select_domain(types: TypeSystem, e: int, r: int) -> int | None:
    """The relation's domain if the entity has it, else None."""
    d = types.relation_domain.get(r)
    if d is None or d not in types.entity_domains.get(e, ()):
        return None
    return d


def conversion_plan(types: TypeSystem, e: int, r: int, normalize: bool = False):
    """``(type_ids, weights)`` defining ``e_r`` as a weighted sum of type rows.

    Returns None when the entity has no types (use the entity embedding).
    ``normalize`` divides the attended sum by its size instead of summing.
    """
    d = select_domain(types, e, r)
    if d is not None:
        tids = sorted(types.domain_types.get((e, d), ()))
        if tids:
            w = 1.0 / len(tids) if normalize else 1.0
            return np.array(tids, dtype=np.int64), np.full(len(tids), w)
    tids = types.entity_types(e)
    if not tids:
        return None
    return np.array(tids, dtype=np.int64), np.full(len(tids), 1.0 / len(tids))


def convert_entity_typed(params: ModelParams, types: TypeSystem, e: int, r: int,
                         normalize: bool = False) -> np.ndarray:
    plan = conversion_plan(types, e, r, normalize)
    if plan is None:
        return params.entity[e].copy()
    tids, weights = plan
    return weights @ params.types[tids]


def convert_entity_projected(params: ModelParams, e: int, r: int) -> np.ndarray:
    return params.projection[r] @ params.entity[e]


class EntityConverter:
    """Batched conversion for the trainer and evaluator, with gradient routing."""

    def __init__(self, mode: str, types: TypeSystem | None = None, normalize_type_sum: bool = False):
        if mode not in ("ec1", "ec2"):
            raise ConfigError(f"converter must be 'ec1' or 'ec2', got {mode!r}")
        if mode == "ec1" and (types is None or types.is_empty()):
            raise ConfigError("converter 'ec1' needs a non-empty type system (load a type file)")
        self.mode = mode
        self.types = types
        self.normalize = normalize_type_sum
        self._plans: dict[tuple[int, int], tuple | None] = {}

    def plan(self, e: int, r: int):
        key = (e, r)
        if key not in self._plans:
            self._plans[key] = conversion_plan(self.types, e, r, self.normalize)
        return self._plans[key]

    def tags(self, e: int, r: int) -> tuple:
        """Parameters that the converted vector of ``(e, r)`` depends on."""
        if self.mode == "ec2":
            return (("entity", e), ("projection", r))
        plan = self.plan(e, r)
        if plan is None:
            return (("entity", e),)
        return tuple(("types", int(t)) for t in plan[0])

    def convert(self, params: ModelParams, e: int, r: int) -> np.ndarray:
        if self.mode == "ec2":
            return convert_entity_projected(params, e, r)
        return convert_entity_typed(params, self.types, e, r, self.normalize)

    def _flat_plans(self, ents, rels):
        items, tids, weights, raw_items, raw_ents = [], [], [], [], []
        for i, (e, r) in enumerate(zip(ents.tolist(), rels.tolist())):
            plan = self.plan(e, r)
            if plan is None:
                raw_items.append(i)
                raw_ents.append(e)
            else:
                items.append(np.full(len(plan[0]), i))
                tids.append(plan[0])
                weights.append(plan[1])
        cat = (lambda xs, dt: np.concatenate(xs).astype(dt) if xs else np.zeros(0, dtype=dt))
        return (cat(items, np.int64), cat(tids, np.int64), cat(weights, np.float64),
                np.array(raw_items, dtype=np.int64), np.array(raw_ents, dtype=np.int64))

    def forward(self, params: ModelParams, ents: np.ndarray, rels: np.ndarray) -> np.ndarray:
        """Convert ``ents[i]`` under ``rels[i]``; returns an ``(n, k)`` array."""
        ents = np.asarray(ents, dtype=np.int64)
        rels = np.asarray(rels, dtype=np.int64)
        if self.mode == "ec2":
            return np.einsum("bij,bj->bi", params.projection[rels], params.entity[ents])
        items, tids, weights, raw_items, raw_ents = self._flat_plans(ents, rels)
        out = np.zeros((ents.size, params.k))
        np.add.at(out, items, weights[:, None] * params.types[tids])
        out[raw_items] = params.entity[raw_ents]
        return out

    def backward(self, params: ModelParams, ents: np.ndarray, rels: np.ndarray, grad: np.ndarray,
                 out: Gradients):
        ents = np.asarray(ents, dtype=np.int64)
        rels = np.asarray(rels, dtype=np.int64)
        if ents.size == 0:
            return
        if self.mode == "ec2":
            out.add_rows("entity", ents, np.einsum("bij,bi->bj", params.projection[rels], grad))
            out.add_rows("projection", rels, np.einsum("bi,bj->bij", grad, params.entity[ents]))
            return
        items, tids, weights, raw_items, raw_ents = self._flat_plans(ents, rels)
        out.add_rows("types", tids, weights[:, None] * grad[items])
        out.add_rows("entity", raw_ents, grad[raw_items])
