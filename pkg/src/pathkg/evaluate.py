"""Filtered ranking evaluation: link prediction, path queries for entities and relations.

Scores are energies, so lower ranks better.  Ranks are filtered (other known
true candidates are removed) and ties count against the correct answer.
"""

from __future__ import annotations

import csv
import logging
from collections import OrderedDict
from dataclasses import dataclass, field

import numpy as np

from .config import Config
from .converter import EntityConverter
from .encoder import PathBatch
from .kg import Graph, Triple, TypeSystem
from .model import ModelParams, vector_norm
from .paths import (GroundedPath, PathSet, _group_by, _select, extract_paths_pcra, invert_path,
                    walk_from, walk_to)
from .rules import HornRule, RuleIndex, compose_path
from .trainer import compose_path_set, energy_triples, path_weights

logger = logging.getLogger(__name__)

LP_HITS = (1, 3, 10)
PQA_ENTITY_HITS = (1, 10)
PQA_RELATION_HITS = (1,)


@dataclass
class RankingReport:
    mr: float
    mrr: float
    hits: dict[int, float]
    count: int
    ranks: list[int] = field(default_factory=list, repr=False)
    rows: list[tuple] = field(default_factory=list, repr=False)

    def format(self, title: str = "") -> str:
        ns = sorted(self.hits)
        head = f"{'':<14}{'MR':>10}{'MRR':>8}" + "".join(f"{'Hits@' + str(n):>9}" for n in ns)
        line = f"{title:<14}{self.mr:>10.3f}{self.mrr:>8.3f}" + "".join(f"{self.hits[n]:>9.3f}" for n in ns)
        return f"{head}\n{line}\n({self.count} ranked cases)"


def report_from_ranks(ranks, hits_at=LP_HITS, rows=None) -> RankingReport:
    ranks = [int(r) for r in ranks]
    if not ranks:
        return RankingReport(float("nan"), float("nan"), {n: float("nan") for n in hits_at}, 0, [], rows or [])
    arr = np.array(ranks, dtype=np.float64)
    hits = {n: float(np.mean(arr <= n)) for n in hits_at}
    return RankingReport(float(arr.mean()), float(np.mean(1.0 / arr)), hits, len(ranks), ranks, rows or [])


def filtered_rank(scores, correct, filter_out=()) -> int:
    """``1 + #{survivors scoring lower} + #{survivors tied with the correct candidate}``.

    ``scores`` is a mapping or a sequence of ``(candidate, score)`` pairs.
    """
    items = scores.items() if isinstance(scores, dict) else scores
    items = list(items)
    target = None
    for cand, s in items:
        if cand == correct:
            target = s
            break
    if target is None:
        raise LookupError(f"correct candidate {correct!r} has no score")
    filter_out = set(filter_out)
    worse = sum(1 for cand, s in items if cand != correct and cand not in filter_out and s <= target)
    return 1 + worse


def rank_array(scores: np.ndarray, correct: int, filtered: np.ndarray | None = None) -> int:
    """Vectorized :func:`filtered_rank` over candidate ids ``0..len(scores)-1``."""
    keep = np.ones(scores.shape[0], dtype=bool)
    if filtered is not None and len(filtered):
        keep[np.asarray(filtered, dtype=np.int64)] = False
    keep[correct] = False
    return 1 + int(np.count_nonzero(scores[keep] <= scores[correct]))


class KnownIndex:
    """Known triples grouped for filtering: ``(h, r) -> tails``, ``(r, t) -> heads``, ``(h, t) -> relations``."""

    def __init__(self, triples):
        self.tails: dict[tuple[int, int], set] = {}
        self.heads: dict[tuple[int, int], set] = {}
        self.relations: dict[tuple[int, int], set] = {}
        for h, r, t in triples:
            self.tails.setdefault((h, r), set()).add(t)
            self.heads.setdefault((r, t), set()).add(h)
            self.relations.setdefault((h, t), set()).add(r)


# -- path energies for many candidates ------------------------------------

class PathScorer:
    """Computes ``(E2(r, P) + E2(r^-1, P^-1)) / 2`` for many candidate path sets at once."""

    def __init__(self, params: ModelParams, converter: EntityConverter, rules: RuleIndex | None, vocab,
                 norm: str):
        self.params = params
        self.converter = converter
        self.rules = rules
        self.vocab = vocab
        self.norm = norm

    def compose(self, paths) -> PathSet:
        return compose_path_set(PathSet.from_forward(paths, self.vocab), self.rules, self.vocab)

    def encode(self, psets: list[PathSet]):
        paths, owner, weight, is_fwd = [], [], [], []
        for i, pset in enumerate(psets):
            if not pset:
                continue
            w = path_weights(pset.forward).tolist()
            for fwd, direction in ((True, pset.forward), (False, pset.backward)):
                paths.extend(direction)
                owner.extend([i] * len(direction))
                weight.extend(w)
                is_fwd.extend([fwd] * len(direction))
        outputs = PathBatch(paths, self.params, self.converter).outputs if paths else np.zeros((0, self.params.k))
        return outputs, np.array(owner, dtype=np.int64), np.array(weight), np.array(is_fwd, dtype=bool)

    def mean_energy(self, psets: list[PathSet], relations) -> np.ndarray:
        """One value per path set; ``relations[i]`` is the query relation of set i."""
        out = np.zeros(len(psets))
        outputs, owner, weight, is_fwd = self.encode(psets)
        if owner.size == 0:
            return out
        rel = np.asarray(relations, dtype=np.int64)[owner]
        inv = np.asarray(self.vocab.inverse_of)
        target = np.where(is_fwd, rel, inv[rel])
        dist = vector_norm(self.params.relation[target] - outputs, self.norm)
        np.add.at(out, owner, 0.5 * weight * dist)
        return out


class _WalkCache:
    def __init__(self, graph: Graph, max_len: int, size: int = 256):
        self.graph, self.max_len, self.size = graph, max_len, size
        self._data: OrderedDict = OrderedDict()

    def get(self, direction: str, node: int) -> dict[int, list[GroundedPath]]:
        key = (direction, node)
        if key in self._data:
            self._data.move_to_end(key)
            return self._data[key]
        walk = walk_from if direction == "from" else walk_to
        keyfn = (lambda p: p.target) if direction == "from" else (lambda p: p.source)
        value = _group_by(walk(self.graph, node, self.max_len), keyfn)
        self._data[key] = value
        if len(self._data) > self.size:
            self._data.popitem(last=False)
        return value


def score_candidate_triple(params: ModelParams, graph: Graph, tr: Triple, pset: PathSet, tradeoff: float,
                           norm: str = "l1", converter: EntityConverter | None = None,
                           rules: RuleIndex | None = None) -> float:
    """``E1 + lambda * (E2(r, P) + E2(r^-1, P^-1)) / 2``; paths are composed with ``rules`` first."""
    e1 = float(energy_triples(params, [tr], norm)[0])
    if tradeoff == 0 or not pset:
        return e1
    converter = converter if converter is not None else EntityConverter(params.converter)
    pset = compose_path_set(pset, rules, graph.vocab)
    scorer = PathScorer(params, converter, None, graph.vocab, norm)
    return e1 + tradeoff * float(scorer.mean_energy([pset], [tr.relation])[0])


def eval_link_prediction(params: ModelParams, graph: Graph, test, cfg: Config, rules: RuleIndex | None = None,
                         types: TypeSystem | None = None) -> RankingReport:
    """Rank the true head and the true tail of each test triple against every entity.

    Candidate pairs get path sets extracted on the fly from the training
    graph (same length cap, path cap and direct-edge exclusion as training);
    pairs with no path are scored by the triple energy alone.
    """
    converter = EntityConverter(params.converter, types, cfg.normalize_type_sum)
    scorer = PathScorer(params, converter, rules, graph.vocab, cfg.norm)
    known = KnownIndex(graph.known)
    walks = _WalkCache(graph, cfg.max_path_len)
    E, R = params.entity, params.relation
    ranks, rows = [], []
    use_paths = cfg.tradeoff > 0
    for case, (h, r, t) in enumerate(np.asarray(test, dtype=np.int64).reshape(-1, 3).tolist()):
        for side in ("tail", "head"):
            if side == "tail":
                scores = vector_norm(E[h] + R[r] - E, cfg.norm)
                filtered = known.tails.get((h, r), set()) - {t}
                correct = t
            else:
                scores = vector_norm(E + R[r] - E[t], cfg.norm)
                filtered = known.heads.get((r, t), set()) - {h}
                correct = h
            if use_paths:
                groups = walks.get("from", h) if side == "tail" else walks.get("to", t)
                excl = r if cfg.exclude_direct else None
                cands, psets = [], []
                for cand, ps in groups.items():
                    sel = _select(ps, cfg.max_paths, excl)
                    if sel:
                        cands.append(cand)
                        psets.append(scorer.compose(sel))
                if cands:
                    scores = scores.copy()
                    scores[cands] += cfg.tradeoff * scorer.mean_energy(psets, [r] * len(cands))
            rank = rank_array(scores, correct, list(filtered))
            ranks.append(rank)
            rows.append((case, h, r, t, side, rank))
    return report_from_ranks(ranks, LP_HITS, rows)


# -- path query answering ---------------------------------------------------

@dataclass
class PQATestCase:
    triple: Triple
    paths: PathSet
    kind: str = "entity"


def build_pqa_testset(graph_full: Graph, paths_train: dict[Triple, PathSet], cfg: Config,
                      kind: str = "entity") -> list[PQATestCase]:
    """Test cases whose paths come from the train+test graph minus every path already used in training.

    A training path also counts as used in its inverted orientation.  Test
    triples left without paths are dropped.
    """
    if not graph_full.index_test:
        graph_full = graph_full.with_test_edges()
    vocab = graph_full.vocab
    seen = set()
    for pset in paths_train.values():
        for p in pset.forward:
            seen.add(p.identity())
            seen.add(invert_path(p, vocab).identity())
    cases, dropped = [], 0
    for h, r, t in graph_full.test.tolist():
        excl = r if cfg.pqa_exclude_direct else None
        pset = extract_paths_pcra(graph_full, h, t, cfg.max_path_len, cfg.max_paths, exclude_relation=excl)
        fresh = [p for p in pset.forward if p.identity() not in seen]
        if not fresh:
            dropped += 1
            continue
        cases.append(PQATestCase(Triple(h, r, t), PathSet.from_forward(fresh, vocab), kind))
    logger.info("PQA %s test set: %d cases, %d test triples dropped without fresh paths",
                kind, len(cases), dropped)
    return cases


def eval_pqa_entity(params: ModelParams, cases: list[PQATestCase], graph: Graph, cfg: Config | None = None,
                    rules: RuleIndex | None = None, types: TypeSystem | None = None) -> RankingReport:
    """Predict the tail from the head and the heaviest path, scoring
    ``||h + RNN(p) - t|| + ||t + RNN(p^-1) - h||`` for every candidate tail."""
    cfg = cfg or Config()
    converter = EntityConverter(params.converter, types, cfg.normalize_type_sum)
    known = KnownIndex(graph.known)
    E = params.entity
    chosen = []
    for case in cases:
        best = min(case.paths.forward, key=GroundedPath.sort_key)
        if rules is not None:
            best = compose_path(best, rules)
        chosen.append(best)
    encodings = PathBatch(chosen + [invert_path(p, graph.vocab) for p in chosen], params, converter).outputs
    fwd, bwd = encodings[: len(chosen)], encodings[len(chosen):]
    ranks, rows = [], []
    for i, case in enumerate(cases):
        h, r, t = case.triple
        scores = vector_norm(E[h] + fwd[i] - E, cfg.norm) + vector_norm(E + bwd[i] - E[h], cfg.norm)
        filtered = known.tails.get((h, r), set()) - {t}
        rank = rank_array(scores, t, list(filtered))
        ranks.append(rank)
        rows.append((i, h, r, t, "tail", rank))
    return report_from_ranks(ranks, PQA_ENTITY_HITS, rows)


@dataclass
class Explanation:
    query: tuple[int, int]
    path: GroundedPath
    rule: HornRule
    correct_relation: int | None
    correct_rank: int | None
    ranking: list[tuple[int, int]]

    def format(self, vocab) -> str:
        en, rn = vocab.entity_names, vocab.relation_names
        h, t = self.query
        hops = " ".join(f"-{rn[r]}-> {en[dst]}" for _, r, dst in self.path.hops())
        w = 22
        lines = [
            f"{'path query:':<{w}}path: {en[h]} {hops}",
            f"{'':<{w}}query: ({en[h]}, ?, {en[t]})",
            f"{'matching rule:':<{w}}{self.rule.format(vocab)}",
        ]
        if self.correct_relation is not None:
            lines.append(f"{'correct relation:':<{w}}{rn[self.correct_relation]}   Rank: {self.correct_rank}")
            others = [(r, k) for r, k in self.ranking if r != self.correct_relation][:2]
            label = "other top relations:"
        else:
            others = self.ranking[:3]
            label = "top relations:"
        for j, (r, k) in enumerate(others):
            lines.append(f"{label if j == 0 else '':<{w}}{rn[r]}   Rank: {k}")
        return "\n".join(lines)


def rank_relations(params: ModelParams, h: int, t: int, pset: PathSet, cfg: Config, scorer: PathScorer,
                   num_relations: int) -> np.ndarray:
    """Score every original relation for the pair ``(h, t)`` given already-composed paths."""
    rels = np.arange(num_relations)
    scores = vector_norm(params.entity[h] + params.relation[rels] - params.entity[t], cfg.norm)
    if cfg.tradeoff > 0 and pset:
        outputs, owner, weight, is_fwd = scorer.encode([pset])
        inv = np.asarray(scorer.vocab.inverse_of)
        R = params.relation
        fwd_o, bwd_o = outputs[is_fwd], outputs[~is_fwd]
        w_f, w_b = weight[is_fwd], weight[~is_fwd]
        d_f = vector_norm(R[rels][:, None, :] - fwd_o[None], cfg.norm) @ w_f
        d_b = vector_norm(R[inv[rels]][:, None, :] - bwd_o[None], cfg.norm) @ w_b
        scores = scores + cfg.tradeoff * 0.5 * (d_f + d_b)
    return scores


def ordered_candidates(scores: np.ndarray, filtered) -> list[tuple[int, int]]:
    """Candidates in rank order after filtering, with their pessimistic ranks."""
    keep = [c for c in np.argsort(scores, kind="stable").tolist() if c not in filtered]
    kept_scores = scores[keep]
    return [(c, int(np.count_nonzero(kept_scores <= scores[c]))) for c in keep]


def explain_case(params, graph: Graph, h: int, t: int, pset: PathSet, cfg: Config, rules: RuleIndex,
                 scorer: PathScorer, correct: int | None = None, filtered=(), top_n: int = 3,
                 scores: np.ndarray | None = None) -> list[Explanation]:
    """Rules whose body is exactly a 2-relation query path and whose head ranks in the top ``top_n``."""
    if scores is None:
        scores = rank_relations(params, h, t, scorer.compose(pset.forward), cfg, scorer,
                                graph.vocab.num_original_relations)
    ordered = ordered_candidates(scores, set(filtered))
    rank_of = dict(ordered)
    top = {c for c, _ in ordered[:top_n]}
    out = []
    for p in pset.forward:
        if len(p.relations) != 2 or rules is None:
            continue
        rule = rules.lookup(*p.relations)
        if rule is None or rule.head not in top:
            continue
        out.append(Explanation((h, t), p, rule, correct, rank_of.get(correct) if correct is not None else None,
                               ordered[: top_n + 1]))
    return out


def eval_pqa_relation(params: ModelParams, cases: list[PQATestCase], graph: Graph, rules: RuleIndex | None,
                      cfg: Config | None = None, types: TypeSystem | None = None, explain_top: int = 3):
    """Rank the true relation of each case among all original relations.

    Returns ``(report, explanations)``.
    """
    cfg = cfg or Config()
    converter = EntityConverter(params.converter, types, cfg.normalize_type_sum)
    scorer = PathScorer(params, converter, rules, graph.vocab, cfg.norm)
    known = KnownIndex(graph.known)
    n_rel = graph.vocab.num_original_relations
    ranks, rows, explanations = [], [], []
    for i, case in enumerate(cases):
        h, r, t = case.triple
        composed = scorer.compose(case.paths.forward)
        scores = rank_relations(params, h, t, composed, cfg, scorer, n_rel)
        filtered = known.relations.get((h, t), set()) - {r}
        rank = rank_array(scores, r, list(filtered))
        ranks.append(rank)
        rows.append((i, h, r, t, "relation", rank))
        if rules is not None and len(rules):
            explanations.extend(explain_case(params, graph, h, t, case.paths, cfg, rules, scorer, correct=r,
                                             filtered=filtered, top_n=explain_top, scores=scores))
    return report_from_ranks(ranks, PQA_RELATION_HITS, rows), explanations


def write_rank_csv(path, report: RankingReport, vocab=None):
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["case", "head", "relation", "tail", "side", "rank"])
        for case, h, r, t, side, rank in report.rows:
            if vocab is not None:
                h, r, t = vocab.entity_names[h], vocab.relation_names[r], vocab.entity_names[t]
            w.writerow([case, h, r, t, side, rank])


def write_report_csv(path, reports: dict[str, RankingReport]):
    ns = sorted({n for rep in reports.values() for n in rep.hits})
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["task", "count", "mr", "mrr"] + [f"hits@{n}" for n in ns])
        for task, rep in reports.items():
            w.writerow([task, rep.count, rep.mr, rep.mrr] + [rep.hits.get(n, "") for n in ns])
