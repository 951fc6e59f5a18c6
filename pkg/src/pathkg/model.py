"""Model parameters, sparse gradient bundles and the norm helpers shared by every energy."""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass

import numpy as np

CONVERTERS = ("ec1", "ec2")
NORMS = ("l1", "l2")
ROW_FAMILIES = ("entity", "relation", "types", "projection")
DENSE_FAMILIES = ("W_h", "W_i")


@dataclass
class EncoderParams:
    W_h: np.ndarray
    W_i: np.ndarray


@dataclass
class ModelParams:
    entity: np.ndarray
    relation: np.ndarray
    encoder: EncoderParams
    converter: str = "ec2"
    types: np.ndarray | None = None
    projection: np.ndarray | None = None

    @property
    def k(self) -> int:
        return self.entity.shape[1]

    def family(self, name: str) -> np.ndarray | None:
        if name in DENSE_FAMILIES:
            return getattr(self.encoder, name)
        return getattr(self, name)

    def families(self) -> dict[str, np.ndarray]:
        out = {name: self.family(name) for name in ROW_FAMILIES + DENSE_FAMILIES}
        return {name: arr for name, arr in out.items() if arr is not None}

    def copy(self) -> "ModelParams":
        return ModelParams(
            entity=self.entity.copy(),
            relation=self.relation.copy(),
            encoder=EncoderParams(self.encoder.W_h.copy(), self.encoder.W_i.copy()),
            converter=self.converter,
            types=None if self.types is None else self.types.copy(),
            projection=None if self.projection is None else self.projection.copy(),
        )

    def all_finite(self) -> bool:
        return all(np.isfinite(arr).all() for arr in self.families().values())


def init_params(num_entities: int, num_relations: int, k: int, converter: str = "ec2",
                num_types: int = 0, rng: np.random.Generator | None = None) -> ModelParams:
    """Random initialization.

    Entities and relations are drawn from U(-6/sqrt(k), 6/sqrt(k)) and scaled
    into the unit ball; type embeddings keep the raw uniform draw.  Projection
    matrices and both recurrent matrices start at identity plus U(-0.01, 0.01)
    noise, so an untrained encoder roughly adds up its inputs.
    """
    if converter not in CONVERTERS:
        raise ValueError(f"converter must be one of {CONVERTERS}")
    rng = rng if rng is not None else np.random.default_rng(0)
    bound = 6.0 / np.sqrt(k)
    entity = renorm_rows(rng.uniform(-bound, bound, size=(num_entities, k)))
    relation = renorm_rows(rng.uniform(-bound, bound, size=(num_relations, k)))
    eye = np.eye(k)
    W_h = eye + rng.uniform(-0.01, 0.01, size=(k, k))
    W_i = eye + rng.uniform(-0.01, 0.01, size=(k, k))
    types = projection = None
    if converter == "ec1":
        types = rng.uniform(-bound, bound, size=(num_types, k))
    else:
        projection = eye[None, :, :] + rng.uniform(-0.01, 0.01, size=(num_relations, k, k))
    return ModelParams(entity, relation, EncoderParams(W_h, W_i), converter, types, projection)


def renorm_rows(x: np.ndarray, radius: float = 1.0) -> np.ndarray:
    """Scale rows with L2 norm above ``radius`` back onto the sphere (in place)."""
    norms = np.linalg.norm(x, axis=-1, keepdims=True)
    scale = np.where(norms > radius, radius / np.maximum(norms, 1e-300), 1.0)
    x *= scale
    return x


def vector_norm(x: np.ndarray, kind: str) -> np.ndarray:
    if kind == "l1":
        return np.abs(x).sum(axis=-1)
    if kind == "l2":
        return np.sqrt((x * x).sum(axis=-1))
    raise ValueError(f"norm must be one of {NORMS}, got {kind!r}")


def vector_norm_grad(x: np.ndarray, kind: str) -> np.ndarray:
    """(Sub)gradient of :func:`vector_norm` w.r.t. ``x``; zero at the kink."""
    if kind == "l1":
        return np.sign(x)
    n = np.sqrt((x * x).sum(axis=-1, keepdims=True))
    return np.divide(x, n, out=np.zeros_like(x), where=n > 0)


class Gradients:
    """Sparse gradient bundle: row updates for embedding tables, dense for the RNN."""

    def __init__(self):
        self._rows = defaultdict(list)
        self.dense: dict[str, np.ndarray] = {}

    def add_rows(self, family: str, ids, values):
        ids = np.asarray(ids, dtype=np.int64).reshape(-1)
        if ids.size:
            values = np.asarray(values, dtype=np.float64)
            if values.shape[0] != ids.size:
                raise ValueError(f"{family}: {ids.size} ids but {values.shape[0]} value rows")
            self._rows[family].append((ids, values))

    def add_dense(self, family: str, value):
        if family in self.dense:
            self.dense[family] = self.dense[family] + value
        else:
            self.dense[family] = np.array(value, dtype=np.float64)

    def merge(self, other: "Gradients"):
        for family, parts in other._rows.items():
            self._rows[family].extend(parts)
        for family, value in other.dense.items():
            self.add_dense(family, value)

    def scale(self, factor: float):
        for family, parts in self._rows.items():
            self._rows[family] = [(ids, vals * factor) for ids, vals in parts]
        for family in self.dense:
            self.dense[family] = self.dense[family] * factor

    def row_families(self):
        return [f for f, parts in self._rows.items() if parts]

    def rows(self, family: str):
        """``(unique_ids, summed_values)`` for a row family; empty arrays if untouched."""
        parts = self._rows.get(family)
        if not parts:
            return np.zeros(0, dtype=np.int64), None
        ids = np.concatenate([p[0] for p in parts])
        vals = np.concatenate([p[1] for p in parts], axis=0)
        uniq, inverse = np.unique(ids, return_inverse=True)
        out = np.zeros((uniq.size,) + vals.shape[1:])
        np.add.at(out, inverse, vals)
        return uniq, out

    def to_dense(self, params: ModelParams) -> dict[str, np.ndarray]:
        out = {}
        for name, arr in params.families().items():
            full = np.zeros_like(arr)
            if name in DENSE_FAMILIES:
                if name in self.dense:
                    full += self.dense[name]
            else:
                ids, vals = self.rows(name)
                if ids.size:
                    full[ids] += vals
            out[name] = full
        return out

    def is_zero(self) -> bool:
        for family in self.row_families():
            if np.any(self.rows(family)[1] != 0):
                return False
        return all(not np.any(v) for v in self.dense.values())
