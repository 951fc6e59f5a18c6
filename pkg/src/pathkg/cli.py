"""Command-line entry point: ``pathkg <subcommand> [options]``.

Exit status is 0 on success, 1 for invalid input or arguments and 2 for
I/O failures.  Every run writes ``run_manifest.json`` into ``--out``.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import subprocess
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .checkpoint import load_checkpoint, load_checkpoint_config, read_manifest, save_checkpoint
from .config import PRESETS, Config
from .converter import EntityConverter
from .errors import PathKGError, ValidationError
from .evaluate import (PathScorer, build_pqa_testset, eval_link_prediction, eval_pqa_entity, eval_pqa_relation,
                       explain_case, ordered_candidates, rank_relations, write_rank_csv)
from .kg import Graph, Triple, load_dataset, load_type_system
from .paths import GroundedPath, PathSet, build_path_index, cache_is_current, read_path_cache
from .rules import RuleIndex, parse_rule_file, write_rule_file
from .trainer import train, write_loss_csv

logger = logging.getLogger("pathkg")

COMMANDS = ("prepare-paths", "mine-import", "train", "eval-lp", "eval-pqa-entity", "eval-pqa-relation",
            "explain", "inspect-checkpoint")
DATA_ENV = "PATHKG_DATA_DIR"


class UsageError(ValidationError):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad usage; 2 is reserved for I/O failures here
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: {message}")


# -- run manifest -----------------------------------------------------------

def _version_string() -> str:
    try:
        out = subprocess.run(["git", "describe", "--always", "--dirty", "--tags"], cwd=Path(__file__).parent,
                             capture_output=True, text=True, timeout=5)
        if out.returncode == 0 and out.stdout.strip():
            return f"v{__version__}-{out.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return f"v{__version__}"


def file_checksum(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


@dataclass
class RunManifest:
    command: str
    argv: list[str]
    config: str
    seed: int
    version: str = field(default_factory=_version_string)
    checksums: dict[str, str] = field(default_factory=dict)
    timings: dict[str, float] = field(default_factory=dict)
    status: str = "running"
    path: Path | None = None

    def checksum(self, label: str, path):
        if path is not None and Path(path).is_file():
            self.checksums[label] = file_checksum(path)

    def stage(self, name: str):
        manifest = self

        class _Timer:
            def __enter__(self):
                self.start = time.perf_counter()

            def __exit__(self, *exc):
                manifest.timings[name] = round(time.perf_counter() - self.start, 6)

        return _Timer()

    def write(self):
        if self.path is None:
            return
        data = {k: v for k, v in self.__dict__.items() if k != "path"}
        tmp = self.path.with_name(self.path.name + ".tmp")
        tmp.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        os.replace(tmp, self.path)


# -- argument parsing ---------------------------------------------------------

def _common(parser: argparse.ArgumentParser):
    g = parser.add_argument_group("shared options")
    g.add_argument("--config", help=f"key=value config file or preset name ({', '.join(PRESETS)})")
    g.add_argument("--seed", type=int)
    g.add_argument("--workers", type=int, help="1 (default) is the deterministic reference mode")
    g.add_argument("--converter", choices=("ec1", "ec2"))
    g.add_argument("--max-path-len", type=int)
    g.add_argument("--max-paths", type=int)
    g.add_argument("--min-rule-conf", type=float)
    g.add_argument("--norm", choices=("l1", "l2"))
    g.add_argument("--data-dir", help=f"dataset directory (falls back to ${DATA_ENV})")
    g.add_argument("--rules", help="rule file (native TSV or AMIE+ export)")
    g.add_argument("--cache", help="path cache file (default: <out>/paths.tsv)")
    g.add_argument("--out", default="out", help="output directory (default: out)")
    g.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="pathkg", description="Path-based knowledge graph embedding pipeline.")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)

    p = sub.add_parser("prepare-paths", help="extract and cache weighted paths for every training triple")
    _common(p)
    p.add_argument("--force", action="store_true", help="rebuild even if the cache is current")

    p = sub.add_parser("mine-import", help="import mined rules, keeping those above the confidence threshold")
    _common(p)
    p.add_argument("--amie-column", type=int, help="AMIE+ column holding the confidence")

    p = sub.add_parser("train", help="train embeddings and write a checkpoint plus loss CSV")
    _common(p)
    p.add_argument("--epochs", type=int)
    p.add_argument("--tradeoff", type=float, help="weight of the path loss (0 disables paths)")
    p.add_argument("--record-timing", action="store_true", help="fill the seconds column of the loss CSV")

    for name, text in (("eval-lp", "filtered link prediction"),
                       ("eval-pqa-entity", "path query answering, entity prediction"),
                       ("eval-pqa-relation", "path query answering, relation prediction")):
        p = sub.add_parser(name, help=text)
        _common(p)
        p.add_argument("--checkpoint", required=True)
        if name == "eval-lp":
            p.add_argument("--split", choices=("test", "valid"), default="test")
        if name == "eval-pqa-relation":
            p.add_argument("--explain-top", type=int, default=3)

    p = sub.add_parser("explain", help="rank relations for one path query and show matching rules")
    _common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--query", required=True, help="'head ? tail'")
    p.add_argument("--path", required=True, help="'rel1 ent1 rel2 ...' starting at the query head")
    p.add_argument("--top", type=int, default=3)

    p = sub.add_parser("inspect-checkpoint", help="print a checkpoint's manifest and array statistics")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("-v", "--verbose", action="store_true")
    return parser


def resolve_config(args) -> Config:
    cfg = Config()
    source = getattr(args, "config", None)
    if source:
        if Path(source).is_file():
            cfg = Config.load(source)
        elif source.lower().removesuffix(".cfg").replace("-", "") in PRESETS:
            cfg = Config.preset(source.lower().removesuffix(".cfg"))
        else:
            raise FileNotFoundError(f"config file not found: {source}")
    overrides = {
        "seed": args.seed, "workers": args.workers, "converter": args.converter,
        "max_path_len": args.max_path_len, "max_paths": args.max_paths,
        "min_rule_confidence": args.min_rule_conf, "norm": args.norm,
        "rule_path": str(Path(args.rules).resolve()) if args.rules else None, "epochs": getattr(args, "epochs", None),
        "tradeoff": getattr(args, "tradeoff", None), "amie_confidence_column": getattr(args, "amie_column", None),
    }
    if args.data_dir:
        overrides["data_dir"] = args.data_dir
    if getattr(args, "record_timing", False):
        overrides["record_timing"] = True
    return cfg.replace(**{k: v for k, v in overrides.items() if v is not None})


def _with_data_root(cfg: Config) -> Config:
    root = os.environ.get(DATA_ENV)
    data_dir = Path(cfg.data_dir) if cfg.data_dir else None
    if root and (data_dir is None or not data_dir.is_absolute() and not data_dir.exists()):
        return cfg.replace(data_dir=str(Path(root) / (cfg.data_dir or "")))
    return cfg


# -- pipeline stages ----------------------------------------------------------

def _load_graph(cfg: Config, manifest: RunManifest) -> Graph:
    paths = [cfg.resolve(n) for n in ("train_path", "valid_path", "test_path")]
    for label, p in zip(("train", "valid", "test"), paths):
        manifest.checksum(label, p)
    with manifest.stage("load"):
        return load_dataset(*paths, column_order=cfg.column_order)


def _load_types(cfg: Config, graph: Graph, manifest: RunManifest):
    if cfg.converter != "ec1":
        return None
    path = cfg.resolve("type_path")
    if path is None:
        raise ValidationError("converter ec1 needs type_path (entity types file)")
    manifest.checksum("types", path)
    return load_type_system(path, graph)


def _load_rules(cfg: Config, graph: Graph, manifest: RunManifest) -> RuleIndex | None:
    path = cfg.resolve("rule_path")
    if path is None:
        return None
    manifest.checksum("rules", path)
    return parse_rule_file(path, graph.vocab, cfg.min_rule_confidence, cfg.amie_confidence_column)


def _cache_path(args, out: Path) -> Path:
    return Path(args.cache) if getattr(args, "cache", None) else out / "paths.tsv"


def _path_index(cfg: Config, graph: Graph, cache: Path, manifest: RunManifest, force: bool = False):
    with manifest.stage("paths"):
        if not force and cache_is_current(cache, graph, cfg.max_path_len, cfg.max_paths, cfg.exclude_direct):
            logger.info("path cache %s is current", cache)
            return read_path_cache(cache, graph.vocab), False
        cache.parent.mkdir(parents=True, exist_ok=True)
        index = build_path_index(graph, cfg.max_path_len, cfg.max_paths, cfg.exclude_direct, cache, cfg.workers)
        return index, True


def _checkpoint_config(args) -> Config:
    """Config stored with the checkpoint, with explicit CLI flags applied on top."""
    cfg = load_checkpoint_config(args.checkpoint)
    values = {}
    for name, attr in (("seed", "seed"), ("workers", "workers"), ("max_path_len", "max_path_len"),
                       ("max_paths", "max_paths"), ("min_rule_confidence", "min_rule_conf"),
                       ("data_dir", "data_dir"), ("rule_path", "rules")):
        v = getattr(args, attr, None)
        if v is not None:
            values[name] = str(Path(v).resolve()) if name == "rule_path" else v
    return cfg.replace(**values)


def _load_model(args, manifest: RunManifest):
    cfg = _with_data_root(_checkpoint_config(args))
    manifest.config, manifest.seed = cfg.to_text(), cfg.seed
    graph = _load_graph(cfg, manifest)
    types = _load_types(cfg, graph, manifest)
    params = load_checkpoint(args.checkpoint, num_entities=graph.vocab.num_entities,
                             num_relations=graph.vocab.num_relations,
                             num_types=types.num_types if types is not None else None)
    if params.converter != cfg.converter:
        cfg = cfg.replace(converter=params.converter)
    rules = _load_rules(cfg, graph, manifest)
    return cfg, graph, types, params, rules


def cmd_prepare_paths(args, cfg, manifest, out):
    graph = _load_graph(cfg, manifest)
    cache = _cache_path(args, out)
    _, built = _path_index(cfg, graph, cache, manifest, force=args.force)
    print(f"{'wrote' if built else 'cache already current:'} {cache}")


def cmd_mine_import(args, cfg, manifest, out):
    if cfg.resolve("rule_path") is None:
        raise ValidationError("mine-import needs --rules FILE")
    graph = _load_graph(cfg, manifest)
    rules = _load_rules(cfg, graph, manifest)
    dest = out / "rules.tsv"
    write_rule_file(dest, sorted(rules, key=lambda r: r.body), graph.vocab)
    print(f"kept {len(rules)} rules (dropped {rules.skipped_low_confidence} at or below "
          f"{cfg.min_rule_confidence}, {rules.skipped_unknown} with unknown relations) -> {dest}")


def cmd_train(args, cfg, manifest, out):
    graph = _load_graph(cfg, manifest)
    types = _load_types(cfg, graph, manifest)
    rules = _load_rules(cfg, graph, manifest)
    index = None
    if cfg.tradeoff > 0:
        index, _ = _path_index(cfg, graph, _cache_path(args, out), manifest)
    with manifest.stage("train"):
        result = train(graph, index, rules, cfg, types)
    with manifest.stage("save"):
        save_checkpoint(result.params, cfg, out / "checkpoint")
        write_loss_csv(out / "loss.csv", result.trace, cfg.record_timing)
    last = result.trace[-1] if result.trace else None
    print(f"trained {cfg.epochs} epochs" + (f", final loss {last.loss:.6f}" if last else ""))
    print(f"checkpoint: {out / 'checkpoint'}\nloss trace: {out / 'loss.csv'}")


def cmd_eval_lp(args, cfg, manifest, out):
    cfg, graph, types, params, rules = _load_model(args, manifest)
    split = graph.test if args.split == "test" else graph.valid
    with manifest.stage("eval"):
        report = eval_link_prediction(params, graph, split, cfg, rules, types)
    write_rank_csv(out / "ranks_lp.csv", report, graph.vocab)
    print(report.format("link pred."))


def _pqa_cases(args, cfg, graph, manifest, out, kind):
    index, _ = _path_index(cfg, graph, _cache_path(args, out), manifest)
    with manifest.stage("pqa-testset"):
        return build_pqa_testset(graph.with_test_edges(), index, cfg, kind)


def cmd_eval_pqa_entity(args, cfg, manifest, out):
    cfg, graph, types, params, rules = _load_model(args, manifest)
    cases = _pqa_cases(args, cfg, graph, manifest, out, "entity")
    with manifest.stage("eval"):
        report = eval_pqa_entity(params, cases, graph, cfg, rules, types)
    write_rank_csv(out / "ranks_pqa_entity.csv", report, graph.vocab)
    print(report.format("PQA entity"))


def cmd_eval_pqa_relation(args, cfg, manifest, out):
    cfg, graph, types, params, rules = _load_model(args, manifest)
    cases = _pqa_cases(args, cfg, graph, manifest, out, "relation")
    with manifest.stage("eval"):
        report, explanations = eval_pqa_relation(params, cases, graph, rules, cfg, types, args.explain_top)
    write_rank_csv(out / "ranks_pqa_relation.csv", report, graph.vocab)
    with open(out / "explanations.txt", "w", encoding="utf-8") as f:
        for ex in explanations:
            f.write(ex.format(graph.vocab) + "\n\n")
    print(report.format("PQA relation"))
    print(f"{len(explanations)} rule explanations -> {out / 'explanations.txt'}")


def parse_query_path(graph: Graph, query: str, path: str) -> tuple[int, int, GroundedPath]:
    vocab = graph.vocab
    q = query.split()
    if len(q) != 3 or q[1] != "?":
        raise ValidationError(f"query must look like 'head ? tail', got {query!r}")
    tokens = path.split()
    if len(tokens) % 2 != 1:
        raise ValidationError("path must alternate relations and entities, starting and ending with a relation")
    try:
        h, t = vocab.entity(q[0]), vocab.entity(q[2])
        rels = tuple(vocab.relation(x) for x in tokens[0::2])
        ents = tuple(vocab.entity(x) for x in tokens[1::2])
    except KeyError as exc:
        raise ValidationError(f"unknown name {exc.args[0]!r}") from None
    nodes = (h, *ents, t)
    for a, r, b in zip(nodes, rels, nodes[1:]):
        if Triple(a, r, b) not in graph.indexed_triples and Triple(a, r, b) not in graph.known:
            logger.warning("hop %s -%s-> %s is not an edge of the graph", vocab.entity_names[a],
                           vocab.relation_names[r], vocab.entity_names[b])
    return h, t, GroundedPath(rels, ents, h, t)


def cmd_explain(args, cfg, manifest, out):
    cfg, graph, types, params, rules = _load_model(args, manifest)
    h, t, path = parse_query_path(graph, args.query, args.path)
    pset = PathSet.from_forward([path], graph.vocab)
    scorer = PathScorer(params, EntityConverter(params.converter, types, cfg.normalize_type_sum), rules,
                        graph.vocab, cfg.norm)
    explanations = explain_case(params, graph, h, t, pset, cfg, rules, scorer, top_n=args.top)
    if explanations:
        for ex in explanations:
            print(ex.format(graph.vocab))
        return
    scores = rank_relations(params, h, t, scorer.compose(pset.forward), cfg, scorer,
                            graph.vocab.num_original_relations)
    print("no rule matches this path among the top-ranked relations; relation ranking:")
    for r, k in ordered_candidates(scores, set())[: args.top]:
        print(f"  {graph.vocab.relation_names[r]}   Rank: {k}")


def cmd_inspect_checkpoint(args):
    manifest = read_manifest(args.checkpoint)
    params = load_checkpoint(args.checkpoint)
    for key, value in manifest.items():
        print(f"{key} = {value}")
    for name, arr in params.families().items():
        norms = np.linalg.norm(arr.reshape(arr.shape[0], -1), axis=1)
        print(f"{name:<11}{str(arr.shape):<16}mean row norm {norms.mean():.4f}  max |x| {np.abs(arr).max():.4f}")


HANDLERS = {
    "prepare-paths": cmd_prepare_paths,
    "mine-import": cmd_mine_import,
    "train": cmd_train,
    "eval-lp": cmd_eval_lp,
    "eval-pqa-entity": cmd_eval_pqa_entity,
    "eval-pqa-relation": cmd_eval_pqa_relation,
    "explain": cmd_explain,
}


def run_command(argv: list[str]) -> int:
    parser = build_parser()
    manifest = None
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            parser.print_help(sys.stderr)
            return 1
        logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                            format="%(levelname)s %(name)s: %(message)s")
        if args.command == "inspect-checkpoint":
            cmd_inspect_checkpoint(args)
            return 0
        cfg = _with_data_root(resolve_config(args))
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        manifest = RunManifest(args.command, list(argv), cfg.to_text(), cfg.seed, path=out / "run_manifest.json")
        manifest.write()
        HANDLERS[args.command](args, cfg, manifest, out)
        manifest.status = "ok"
        manifest.write()
        return 0
    except (ValidationError, PathKGError) as exc:
        _fail(manifest, exc)
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        _fail(manifest, exc)
        print(f"I/O error: {exc}", file=sys.stderr)
        return 2


def _fail(manifest: RunManifest | None, exc: Exception):
    if manifest is None:
        return
    manifest.status = f"failed: {exc}"
    try:
        manifest.write()
    except OSError:
        pass


def main(argv=None) -> int:
    return run_command(sys.argv[1:] if argv is None else list(argv))


if __name__ == "__main__":
    sys.exit(main())
