"""Energies, negative sampling, the two-part margin loss and the SGD training loop.

Triple energy ``E1(h, r, t) = ||h + r - t||``.  Path-set energy
``E2(r, P) = sum_i c_i a_i ||r - RNN(p_i)|| / sum_i a_i`` where ``a_i`` is the
resource-flow weight and ``c_i`` the rule-composition confidence of path i.

Per positive triple, with one corrupted triple and one corrupted relation r':

    L1 = [g1 + E1(pos) - E1(neg)]+
    L2 = [g2 + (E2(r, P) + E2(r^-1, P^-1)) / 2 - E2(r', P)]+
    L  = sum (L1 + lambda * L2)

Triples without paths contribute L1 only.
"""

from __future__ import annotations

import csv
import logging
import time
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .config import Config
from .converter import EntityConverter
from .encoder import PathBatch
from .errors import NegativeSamplingError, NonFiniteLossError
from .kg import Graph, Triple, TypeSystem
from .model import Gradients, ModelParams, init_params, renorm_rows, vector_norm, vector_norm_grad
from .paths import PathSet, invert_path
from .rules import RuleIndex, compose_path

logger = logging.getLogger(__name__)

MAX_NEGATIVE_ATTEMPTS = 100

# bumped whenever a path-set energy is evaluated; lets tests prove the lambda=0 path never runs
CALL_COUNTS: Counter = Counter()


def energy_triple(params: ModelParams, tr: Triple, norm: str = "l1") -> float:
    h, r, t = tr
    return float(vector_norm(params.entity[h] + params.relation[r] - params.entity[t], norm))


def energy_triples(params: ModelParams, triples: np.ndarray, norm: str = "l1") -> np.ndarray:
    triples = np.asarray(triples, dtype=np.int64).reshape(-1, 3)
    diff = params.entity[triples[:, 0]] + params.relation[triples[:, 1]] - params.entity[triples[:, 2]]
    return vector_norm(diff, norm)


def path_weights(paths) -> np.ndarray:
    """``c_i * a_i / sum(a)`` for one path set."""
    alpha = np.array([p.alpha for p in paths], dtype=np.float64)
    conf = np.array([p.confidence for p in paths], dtype=np.float64)
    return conf * alpha / alpha.sum()


def energy_path_set(params: ModelParams, r: int, paths, norm: str = "l1",
                    converter: EntityConverter | None = None, encodings: np.ndarray | None = None) -> float:
    """Weighted mean distance between relation ``r`` and each encoded path; 0 for no paths."""
    paths = list(paths)
    if not paths:
        return 0.0
    CALL_COUNTS["energy_path_set"] += 1
    if encodings is None:
        converter = converter if converter is not None else EntityConverter(params.converter)
        encodings = PathBatch(paths, params, converter).outputs
    dist = vector_norm(params.relation[r][None, :] - encodings, norm)
    return float(path_weights(paths) @ dist)


def compose_path_set(pset: PathSet, rules: RuleIndex | None, vocab) -> PathSet:
    """Compose the forward paths, then derive the backward set by inversion."""
    if rules is None or not rules.by_body:
        return pset
    forward = [compose_path(p, rules) for p in pset.forward]
    return PathSet(forward, [invert_path(p, vocab) for p in forward])


# -- negative sampling -----------------------------------------------------

def corrupt_relation(rng: np.random.Generator, r: int, num_relations: int) -> int:
    """Uniform original relation different from ``r``."""
    if num_relations < 2:
        raise NegativeSamplingError(("relation", r), 0)
    draw = int(rng.integers(num_relations - 1))
    return draw + 1 if draw >= r else draw


def sample_negatives(graph: Graph, tr: Triple, rng: np.random.Generator) -> tuple[Triple, int]:
    """One corrupted triple outside the training set, plus a corrupted relation ``r' != r``.

    The corrupted slot (head, relation or tail) is chosen uniformly once; its
    replacement is redrawn up to ``MAX_NEGATIVE_ATTEMPTS`` times.
    """
    vocab = graph.vocab
    n_ent, n_rel = vocab.num_entities, vocab.num_original_relations
    h, r, t = tr
    slot = int(rng.integers(3))
    for _ in range(MAX_NEGATIVE_ATTEMPTS):
        if slot == 0:
            cand = Triple(int(rng.integers(n_ent)), r, t)
        elif slot == 1:
            cand = Triple(h, int(rng.integers(n_rel)), t)
        else:
            cand = Triple(h, r, int(rng.integers(n_ent)))
        if cand not in graph.triples:
            break
    else:
        raise NegativeSamplingError(tuple(tr), MAX_NEGATIVE_ATTEMPTS)
    return cand, corrupt_relation(rng, r, n_rel)


# -- loss ------------------------------------------------------------------

@dataclass
class Batch:
    positives: list[Triple]
    negatives: list[Triple]
    negative_relations: list[list[int]]
    path_sets: list[PathSet] | None = None


@dataclass
class LossResult:
    loss: float
    l1: float
    l2: float
    grads: Gradients = field(repr=False)


def margin_losses(params: ModelParams, batch: Batch, cfg: Config, converter: EntityConverter | None = None,
                  inverse_of=None) -> LossResult:
    """Loss value and analytic gradients of the two-part margin objective for one batch.

    ``inverse_of`` maps relation ids to their inverses; it defaults to the
    layout produced by :class:`~pathkg.kg.Vocab` (inverses in the second half).
    """
    grads = Gradients()
    E, R = params.entity, params.relation
    pos = np.asarray(batch.positives, dtype=np.int64).reshape(-1, 3)
    neg = np.asarray(batch.negatives, dtype=np.int64).reshape(-1, 3)

    d_pos = E[pos[:, 0]] + R[pos[:, 1]] - E[pos[:, 2]]
    d_neg = E[neg[:, 0]] + R[neg[:, 1]] - E[neg[:, 2]]
    m1 = cfg.margin_triple + vector_norm(d_pos, cfg.norm) - vector_norm(d_neg, cfg.norm)
    act = m1 > 0
    # np.maximum keeps NaN so a diverged batch is not silently dropped
    l1 = float(np.maximum(m1, 0.0).sum())
    if act.any():
        gp = vector_norm_grad(d_pos[act], cfg.norm)
        gn = vector_norm_grad(d_neg[act], cfg.norm)
        p, n = pos[act], neg[act]
        grads.add_rows("entity", np.concatenate([p[:, 0], p[:, 2], n[:, 0], n[:, 2]]),
                       np.concatenate([gp, -gp, -gn, gn]))
        grads.add_rows("relation", np.concatenate([p[:, 1], n[:, 1]]), np.concatenate([gp, -gn]))

    l2 = 0.0
    lam = cfg.tradeoff
    if lam > 0 and batch.path_sets is not None:
        l2 = _path_loss(params, batch, cfg, converter, inverse_of, grads)
    return LossResult(l1 + lam * l2, l1, l2, grads)


def _path_loss(params, batch, cfg, converter, inverse_of, grads) -> float:
    R = params.relation
    num_rel = R.shape[0]
    if inverse_of is None:
        half = num_rel // 2
        inverse_of = np.concatenate([np.arange(half, num_rel), np.arange(half)])
    inverse_of = np.asarray(inverse_of)
    converter = converter if converter is not None else EntityConverter(params.converter)

    paths, owner, weight, is_fwd = [], [], [], []
    for i, pset in enumerate(batch.path_sets):
        if not pset:
            continue
        w = path_weights(pset.forward)
        for forward, direction in ((True, pset.forward), (False, pset.backward)):
            paths.extend(direction)
            owner.extend([i] * len(direction))
            weight.extend(w.tolist())
            is_fwd.extend([forward] * len(direction))
    if not paths:
        return 0.0
    CALL_COUNTS["energy_path_set"] += 1

    nb = len(batch.positives)
    owner = np.array(owner, dtype=np.int64)
    weight = np.array(weight)
    is_fwd = np.array(is_fwd)
    rel = np.asarray(batch.positives, dtype=np.int64).reshape(-1, 3)[:, 1]
    # per path: the relation it is compared with (r for forward, r^-1 for backward)
    target_rel = np.where(is_fwd, rel[owner], inverse_of[rel[owner]])

    encoded = PathBatch(paths, params, converter)
    O = encoded.outputs
    diff = R[target_rel] - O
    dist = vector_norm(diff, cfg.norm)
    e2_fwd = np.zeros(nb)
    e2_bwd = np.zeros(nb)
    np.add.at(e2_fwd, owner[is_fwd], weight[is_fwd] * dist[is_fwd])
    np.add.at(e2_bwd, owner[~is_fwd], weight[~is_fwd] * dist[~is_fwd])
    has_paths = np.zeros(nb, dtype=bool)
    has_paths[owner] = True

    fwd_idx = np.flatnonzero(is_fwd)
    f_owner = owner[fwd_idx]
    G = np.zeros_like(O)
    g_pos = vector_norm_grad(diff, cfg.norm) * weight[:, None]
    total = 0.0
    pos_scale = np.zeros(nb)
    for slot in range(len(batch.negative_relations[0]) if batch.negative_relations else 0):
        r_neg = np.array([rs[slot] for rs in batch.negative_relations], dtype=np.int64)
        diff_n = R[r_neg[f_owner]] - O[fwd_idx]
        e2_neg = np.zeros(nb)
        np.add.at(e2_neg, f_owner, weight[fwd_idx] * vector_norm(diff_n, cfg.norm))
        m2 = cfg.margin_path + 0.5 * (e2_fwd + e2_bwd) - e2_neg
        act = (m2 > 0) & has_paths
        total += float(np.maximum(m2, 0.0)[has_paths].sum())
        pos_scale += act
        live = act[f_owner]
        if live.any():
            gn = vector_norm_grad(diff_n[live], cfg.norm) * weight[fwd_idx][live][:, None]
            grads.add_rows("relation", r_neg[f_owner][live], -cfg.tradeoff * gn)
            G[fwd_idx[live]] += cfg.tradeoff * gn

    # each active hinge slot contributes +0.5 * (E2(r, P) + E2(r^-1, P^-1))
    coef = 0.5 * cfg.tradeoff * pos_scale[owner]
    live = coef > 0
    if live.any():
        gp = g_pos[live] * coef[live][:, None]
        grads.add_rows("relation", target_rel[live], gp)
        G[live] -= gp
    encoded.backward(G, grads, cfg.grad_clip)
    return total


def batch_losses(params: ModelParams, batch: Batch, cfg: Config, converter: EntityConverter,
                 inverse_of=None, pool: ThreadPoolExecutor | None = None) -> LossResult:
    """:func:`margin_losses`, optionally split across a worker pool with ordered merging."""
    if pool is None or len(batch.positives) < 2:
        return margin_losses(params, batch, cfg, converter, inverse_of)
    n = len(batch.positives)
    chunks = np.array_split(np.arange(n), min(cfg.workers, n))

    def sub(idx):
        return Batch(
            [batch.positives[i] for i in idx], [batch.negatives[i] for i in idx],
            [batch.negative_relations[i] for i in idx],
            None if batch.path_sets is None else [batch.path_sets[i] for i in idx],
        )

    results = list(pool.map(lambda idx: margin_losses(params, sub(idx), cfg, converter, inverse_of), chunks))
    grads = Gradients()
    for res in results:
        grads.merge(res.grads)
    return LossResult(sum(r.loss for r in results), sum(r.l1 for r in results), sum(r.l2 for r in results), grads)


def apply_sgd(params: ModelParams, grads: Gradients, lr: float, l1_reg: float = 0.0):
    """Plain SGD on every touched parameter, with L1 shrinkage on the same entries."""
    for family in grads.row_families():
        ids, vals = grads.rows(family)
        arr = params.family(family)
        step = vals
        if l1_reg:
            step = step + l1_reg * np.sign(arr[ids])
        arr[ids] -= lr * step
    for family, value in grads.dense.items():
        arr = params.family(family)
        step = value + l1_reg * np.sign(arr) if l1_reg else value
        arr -= lr * step


# -- training loop ----------------------------------------------------------

@dataclass
class EpochStats:
    epoch: int
    loss: float
    l1: float
    l2: float
    seconds: float


@dataclass
class TrainResult:
    params: ModelParams
    trace: list[EpochStats]


def train(graph: Graph, paths: dict[Triple, PathSet] | None, rules: RuleIndex | None, cfg: Config,
          types: TypeSystem | None = None, params: ModelParams | None = None, on_epoch=None) -> TrainResult:
    """Minibatch SGD over the training split for ``cfg.epochs`` epochs.

    Each epoch shuffles the training triples, walks them in batches of
    ``cfg.batch_size``, corrupts each positive, composes its cached paths with
    the rules (once per triple), applies one synchronous SGD step per batch,
    and finally projects entity embeddings into the unit ball.  With
    ``workers == 1`` the run is deterministic for a fixed seed.
    """
    cfg.validate()
    vocab = graph.vocab
    rng = np.random.default_rng(cfg.seed)
    converter = EntityConverter(cfg.converter, types, cfg.normalize_type_sum)
    if params is None:
        params = init_params(vocab.num_entities, vocab.num_relations, cfg.k, cfg.converter,
                             types.num_types if types is not None else 0, rng)
    inverse_of = np.asarray(vocab.inverse_of)
    use_paths = cfg.tradeoff > 0 and paths is not None
    composed: dict[Triple, PathSet] = {}
    empty = PathSet()

    def path_set(tr: Triple) -> PathSet:
        if tr not in composed:
            composed[tr] = compose_path_set(paths.get(tr, empty), rules, vocab)
        return composed[tr]

    triples = [Triple(*map(int, row)) for row in graph.train]
    pool = ThreadPoolExecutor(max_workers=cfg.workers) if cfg.workers > 1 else None
    trace: list[EpochStats] = []
    try:
        for epoch in range(1, cfg.epochs + 1):
            start = time.perf_counter()
            order = rng.permutation(len(triples))
            tot = tot1 = tot2 = 0.0
            for b, lo in enumerate(range(0, len(order), cfg.batch_size)):
                positives = [triples[i] for i in order[lo: lo + cfg.batch_size]]
                negatives, neg_rels = [], []
                for tr in positives:
                    neg, r_neg = sample_negatives(graph, tr, rng)
                    extra = [corrupt_relation(rng, tr.relation, vocab.num_original_relations)
                             for _ in range(cfg.relation_negatives - 1)]
                    negatives.append(neg)
                    neg_rels.append([r_neg, *extra])
                psets = [path_set(tr) for tr in positives] if use_paths else None
                batch = Batch(positives, negatives, neg_rels, psets)
                res = batch_losses(params, batch, cfg, converter, inverse_of, pool)
                if not np.isfinite(res.loss):
                    raise NonFiniteLossError(epoch, b, tuple(positives[0]), res.loss)
                apply_sgd(params, res.grads, cfg.learning_rate, cfg.l1_reg)
                tot, tot1, tot2 = tot + res.loss, tot1 + res.l1, tot2 + res.l2
            renorm_rows(params.entity)
            if not params.all_finite():
                raise NonFiniteLossError(epoch, -1, None, float("nan"))
            stats = EpochStats(epoch, tot, tot1, tot2, time.perf_counter() - start)
            trace.append(stats)
            logger.debug("epoch %d loss %.6f (l1 %.6f, l2 %.6f)", epoch, tot, tot1, tot2)
            if on_epoch is not None:
                on_epoch(stats, params)
    finally:
        if pool is not None:
            pool.shutdown()
    return TrainResult(params, trace)


def write_loss_csv(path, trace: list[EpochStats], record_timing: bool = False):
    """``epoch,loss,l1_component,l2_component,seconds``; seconds are 0 unless timing is recorded."""
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["epoch", "loss", "l1_component", "l2_component", "seconds"])
        for s in trace:
            secs = format(s.seconds, ".6f") if record_timing else "0"
            w.writerow([s.epoch, format(s.loss, ".17g"), format(s.l1, ".17g"), format(s.l2, ".17g"), secs])


def read_loss_csv(path) -> list[EpochStats]:
    with open(path, encoding="utf-8") as f:
        return [EpochStats(int(row["epoch"]), float(row["loss"]), float(row["l1_component"]),
                           float(row["l2_component"]), float(row["seconds"]))
                for row in csv.DictReader(f)]
