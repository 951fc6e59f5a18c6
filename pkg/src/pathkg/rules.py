"""Length-2 horn rules ``head(x, y) <= body1(x, z) & body2(z, y)`` and path composition."""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field, replace

from .errors import ParseError
from .kg import Vocab
from .paths import GroundedPath

logger = logging.getLogger(__name__)

DEFAULT_MIN_CONFIDENCE = 0.7
AMIE_PCA_COLUMN = 3


@dataclass(frozen=True)
class HornRule:
    body_first: int
    body_second: int
    head: int
    confidence: float

    def __post_init__(self):
        if not 0.0 < self.confidence <= 1.0:
            raise ValueError(f"rule confidence must lie in (0, 1], got {self.confidence}")

    @property
    def body(self) -> tuple[int, int]:
        return (self.body_first, self.body_second)

    def format(self, vocab: Vocab) -> str:
        n = vocab.relation_names
        return (f"{n[self.head]}(x, y) <= {n[self.body_first]}(x, z) ^ {n[self.body_second]}(z, y) "
                f"(confidence: {self.confidence:g})")


@dataclass
class RuleIndex:
    by_body: dict[tuple[int, int], HornRule] = field(default_factory=dict)
    skipped_unknown: int = 0
    skipped_low_confidence: int = 0

    @classmethod
    def from_rules(cls, rules, min_confidence: float = 0.0) -> "RuleIndex":
        index = cls()
        for rule in rules:
            index.add(rule, min_confidence)
        return index

    def add(self, rule: HornRule, min_confidence: float = 0.0) -> bool:
        if rule.confidence <= min_confidence:
            self.skipped_low_confidence += 1
            return False
        current = self.by_body.get(rule.body)
        if current is None or rule.confidence > current.confidence:
            self.by_body[rule.body] = rule
        return True

    def lookup(self, r1: int, r2: int) -> HornRule | None:
        return self.by_body.get((r1, r2))

    def __len__(self) -> int:
        return len(self.by_body)

    def __iter__(self):
        return iter(self.by_body.values())


def compose_path(path: GroundedPath, rules: RuleIndex) -> GroundedPath:
    """Condense ``path`` with a 2-step sliding window, leftmost match first.

    Each replacement swaps the matched relation pair for the rule head, drops
    the entity between them and multiplies the confidence by the rule's;
    scanning restarts at the head end until no window matches.
    """
    if len(path.relations) < 2 or not rules.by_body:
        return path
    relations = list(path.relations)
    entities = list(path.entities)
    confidence = path.confidence
    changed = False
    i = 0
    while i < len(relations) - 1:
        rule = rules.by_body.get((relations[i], relations[i + 1]))
        if rule is None:
            i += 1
            continue
        relations[i : i + 2] = [rule.head]
        del entities[i]
        confidence *= rule.confidence
        changed = True
        i = 0
    if not changed:
        return path
    return replace(path, relations=tuple(relations), entities=tuple(entities), confidence=confidence)


_AMIE_ATOM = re.compile(r"(\?\w+)\s+(\S+)\s+(\?\w+)")


def _parse_amie_rule(text: str):
    """``'?a r1 ?b  ?b r2 ?c   => ?a r3 ?c'`` -> ``(r1, r2, r3)`` names, or None if not a chain."""
    body_text, head_text = text.split("=>", 1)
    body = _AMIE_ATOM.findall(body_text)
    head = _AMIE_ATOM.findall(head_text)
    if len(body) != 2 or len(head) != 1:
        return None
    x, r3, y = head[0]
    for first, second in (body, body[::-1]):
        (a, r1, z1), (z2, r2, b) = first, second
        if a == x and b == y and z1 == z2 and z1 not in (x, y):
            return r1, r2, r3
    return None


def parse_rule_file(path, vocab: Vocab, min_confidence: float = DEFAULT_MIN_CONFIDENCE,
                    amie_confidence_column: int = AMIE_PCA_COLUMN) -> RuleIndex:
    """Read rules in the native TSV (``body1 body2 head confidence``) or AMIE+ export format.

    AMIE+ is detected by a ``=>`` token; its confidence is read from column
    ``amie_confidence_column`` (PCA confidence by default, rule text is column 0).
    Only rules with confidence strictly above ``min_confidence`` are kept.
    """
    with open(path, encoding="utf-8") as f:
        lines = [line.rstrip("\r\n") for line in f]
    amie = any("=>" in line for line in lines)
    index = RuleIndex()
    rejected_shape = 0
    for lineno, line in enumerate(lines, start=1):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        fields = line.split("\t")
        if amie:
            if "=>" not in fields[0]:
                continue  # header or summary line
            names = _parse_amie_rule(fields[0])
            if names is None:
                rejected_shape += 1
                continue
            if amie_confidence_column >= len(fields):
                raise ParseError(f"no confidence column {amie_confidence_column}", path, lineno)
            raw_conf = fields[amie_confidence_column]
        else:
            if len(fields) != 4:
                raise ParseError(f"expected 4 tab-separated fields, got {len(fields)}", path, lineno)
            names, raw_conf = fields[:3], fields[3]
        try:
            confidence = float(raw_conf.strip().replace(",", "."))
        except ValueError:
            raise ParseError(f"unreadable confidence {raw_conf!r}", path, lineno) from None
        if not 0.0 < confidence <= 1.0:
            raise ParseError(f"confidence {confidence} outside (0, 1]", path, lineno)
        try:
            r1, r2, r3 = (vocab.relation_ids[name.strip()] for name in names)
        except KeyError:
            index.skipped_unknown += 1
            continue
        index.add(HornRule(r1, r2, r3, confidence), min_confidence)

    if index.skipped_unknown:
        logger.warning("%s: skipped %d rules with unknown relations", path, index.skipped_unknown)
    if rejected_shape:
        logger.warning("%s: skipped %d AMIE+ rules that are not x-z, z-y chains of length 2", path, rejected_shape)
    if not index:
        logger.warning("%s: no rules retained; training falls back to the data-driven encoder only", path)
    logger.info("rules: %d retained (%d below confidence %.2f)", len(index),
                index.skipped_low_confidence, min_confidence)
    return index


def write_rule_file(path, rules, vocab: Vocab):
    with open(path, "w", encoding="utf-8") as f:
        for rule in rules:
            n = vocab.relation_names
            f.write(f"{n[rule.body_first]}\t{n[rule.body_second]}\t{n[rule.head]}\t{rule.confidence!r}\n")
