"""Dialogue data model, JSONL ingestion and descriptive corpus statistics."""

import hashlib
import json
import logging
import re
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Optional

import numpy as np

from .errors import (
    EmptyPopulationError,
    ParseError,
    PreconditionError,
    SchemaError,
)

logger = logging.getLogger(__name__)


class StrategyLabel(str, Enum):
    SourceDerogation = "SourceDerogation"
    CounterArgument = "CounterArgument"
    PersonalChoice = "PersonalChoice"
    InformationInquiry = "InformationInquiry"
    SelfPity = "SelfPity"
    Hesitance = "Hesitance"
    SelfAssertion = "SelfAssertion"
    NotAStrategy = "NotAStrategy"

    @property
    def index(self) -> int:
        return LABELS.index(self)

    @classmethod
    def parse(cls, value: str, line=None) -> "StrategyLabel":
        try:
            return cls[value]
        except KeyError:
            raise SchemaError(f"unknown strategy label {value!r}", line=line) from None


LABELS = tuple(StrategyLabel)
N_LABELS = len(LABELS)


class Domain(str, Enum):
    P4G = "P4G"
    CB = "CB"


class Role(str, Enum):
    ER = "ER"  # persuader
    EE = "EE"  # persuadee
    BU = "BU"  # buyer
    SE = "SE"  # seller

    @property
    def domain(self) -> Domain:
        return Domain.P4G if self in (Role.ER, Role.EE) else Domain.CB

    @property
    def labeled(self) -> bool:
        return self in LABELED_ROLES[self.domain]

    @classmethod
    def parse(cls, value: str) -> "Role":
        try:
            return cls(value.upper())
        except ValueError:
            raise SchemaError(f"unknown speaker role {value!r}") from None


LABELED_ROLES = {
    Domain.P4G: frozenset({Role.EE}),
    Domain.CB: frozenset({Role.BU, Role.SE}),
}
ROLES_OF = {
    Domain.P4G: (Role.ER, Role.EE),
    Domain.CB: (Role.BU, Role.SE),
}

# Raw CB exports mark unannotated turns this way.
_SKIP_MARKERS = {"skip"}


@dataclass(frozen=True)
class Utterance:
    turn: int
    speaker: Role
    text: str
    labels: frozenset = frozenset()
    uid: str = ""
    # Persuader strategy tokens from the upstream P4G annotation scheme; opaque strings.
    persuasion_strategies: tuple = ()

    @property
    def tokens(self) -> list:
        return tokenize(self.text)

    @property
    def is_labeled(self) -> bool:
        return self.speaker.labeled


@dataclass(frozen=True)
class CBScenario:
    listed_price: float
    buyer_target_price: float
    sale_price: Optional[float] = None
    deal_reached: bool = False

    @property
    def completed(self) -> bool:
        return self.deal_reached and self.sale_price is not None


@dataclass(frozen=True)
class P4GScenario:
    donation_amount: Optional[float]


@dataclass(frozen=True)
class Conversation:
    id: str
    domain: Domain
    utterances: tuple
    scenario: object = None
    extra: dict = field(default_factory=dict, compare=False)

    def __len__(self):
        return len(self.utterances)

    def labeled_utterances(self, role: Optional[Role] = None) -> list:
        return [
            u
            for u in self.utterances
            if u.is_labeled and (role is None or u.speaker == role)
        ]


_TOKEN_RE = re.compile(r"\w+|[^\w\s]", re.UNICODE)


def tokenize(text: str) -> list:
    """Lowercased whitespace + punctuation split."""
    return _TOKEN_RE.findall(text.lower())


def stable_hash(text: str) -> int:
    return int.from_bytes(hashlib.blake2b(text.encode("utf-8"), digest_size=8).digest(), "little")


def collapse_multilabel(utterance: Utterance, seed: int = 0) -> StrategyLabel:
    """Pick one label from a multi-label utterance, reproducibly.

    The draw is seeded by ``hash(uid) ^ seed`` so the choice depends only on
    the utterance id, its label set and the seed.
    """
    if not utterance.labels:
        raise PreconditionError(f"utterance {utterance.uid!r} has no labels to collapse")
    ordered = sorted(utterance.labels, key=lambda lab: lab.index)
    if len(ordered) == 1:
        return ordered[0]
    rng = np.random.default_rng(stable_hash(utterance.uid) ^ (seed & 0xFFFFFFFFFFFFFFFF))
    return ordered[int(rng.integers(len(ordered)))]


def gold_labels(conversation: Conversation, seed: int = 0) -> list:
    return [collapse_multilabel(u, seed) for u in conversation.labeled_utterances()]


# ---------------------------------------------------------------- ingestion


def _require(record, key, line, kind=None):
    if key not in record:
        raise SchemaError(f"missing field {key!r}", line=line)
    value = record[key]
    if kind is not None and not isinstance(value, kind):
        raise SchemaError(f"field {key!r} has type {type(value).__name__}", line=line)
    return value


def _number(value, name, line, optional=False):
    if value is None and optional:
        return None
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise SchemaError(f"field {name!r} must be numeric, got {value!r}", line=line)
    return float(value)


def _parse_scenario(raw, domain, line):
    if not isinstance(raw, dict):
        raise SchemaError("scenario must be an object", line=line)
    if domain is Domain.CB:
        listed = _number(_require(raw, "listed_price", line), "listed_price", line)
        target = _number(_require(raw, "buyer_target_price", line), "buyer_target_price", line)
        sale = _number(raw.get("sale_price"), "sale_price", line, optional=True)
        deal = raw.get("deal_reached", sale is not None)
        if not isinstance(deal, bool):
            raise SchemaError("deal_reached must be a boolean", line=line)
        if listed <= 0:
            raise SchemaError(f"listed_price must be positive, got {listed}", line=line)
        return CBScenario(listed, target, sale, deal)
    amount = _number(raw.get("donation_amount"), "donation_amount", line, optional=True)
    if amount is not None and amount < 0:
        raise SchemaError(f"donation_amount must be >= 0, got {amount}", line=line)
    return P4GScenario(amount)


def _parse_utterance(raw, domain, conv_id, line):
    if not isinstance(raw, dict):
        raise SchemaError("utterance must be an object", line=line)
    turn = _require(raw, "turn", line)
    if isinstance(turn, bool) or not isinstance(turn, int) or turn < 0:
        raise SchemaError(f"turn must be a non-negative integer, got {turn!r}", line=line)
    try:
        speaker = Role.parse(_require(raw, "speaker", line, str))
    except SchemaError as exc:
        raise SchemaError(str(exc), line=line) from None
    if speaker.domain is not domain:
        raise SchemaError(f"speaker {speaker.value} is not valid for domain {domain.value}", line=line)
    text = _require(raw, "text", line, str)
    raw_labels = raw.get("labels", [])
    if not isinstance(raw_labels, list):
        raise SchemaError("labels must be a list", line=line)
    labels = set()
    for name in raw_labels:
        if not isinstance(name, str):
            raise SchemaError(f"label {name!r} is not a string", line=line)
        if name.lower() in _SKIP_MARKERS:
            labels.add(StrategyLabel.NotAStrategy)
        else:
            labels.add(StrategyLabel.parse(name, line=line))
    if speaker.labeled:
        if not labels:
            labels = {StrategyLabel.NotAStrategy}
        if StrategyLabel.NotAStrategy in labels and len(labels) > 1:
            raise SchemaError("NotAStrategy cannot be combined with other labels", line=line)
    elif labels:
        raise SchemaError(f"{speaker.value} utterances carry no resisting-strategy labels", line=line)
    strategies = raw.get("persuasion_strategies", [])
    if not isinstance(strategies, list) or not all(isinstance(s, str) for s in strategies):
        raise SchemaError("persuasion_strategies must be a list of strings", line=line)
    return Utterance(
        turn=turn,
        speaker=speaker,
        text=text,
        labels=frozenset(labels),
        uid=f"{conv_id}#{turn}",
        persuasion_strategies=tuple(strategies),
    )


def parse_record(record: dict, domain=None, line=None) -> Conversation:
    if not isinstance(record, dict):
        raise SchemaError("record must be a JSON object", line=line)
    conv_id = str(_require(record, "id", line))
    try:
        rec_domain = Domain(_require(record, "domain", line, str).upper())
    except ValueError:
        raise SchemaError(f"unknown domain {record['domain']!r}", line=line) from None
    if domain is not None and rec_domain is not Domain(domain):
        raise SchemaError(f"record domain {rec_domain.value} != requested {Domain(domain).value}", line=line)
    raw_utts = _require(record, "utterances", line, list)
    if not raw_utts:
        raise SchemaError("conversation has no utterances", line=line)
    utterances = tuple(_parse_utterance(u, rec_domain, conv_id, line) for u in raw_utts)
    turns = [u.turn for u in utterances]
    if any(b <= a for a, b in zip(turns, turns[1:])):
        raise SchemaError("turn indices must be strictly increasing", line=line)
    scenario = _parse_scenario(record.get("scenario", {}), rec_domain, line)
    return Conversation(conv_id, rec_domain, utterances, scenario)


def load_corpus(path, domain=None) -> list:
    """Read a JSONL corpus, one conversation per line.

    CB scenarios whose buyer target is not below the listed price make the
    sale-to-list ratio meaningless; they are dropped with a warning.
    """
    path = Path(path)
    if not path.exists():
        raise PreconditionError(f"corpus file not found: {path}")
    conversations = []
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"malformed JSON: {exc.msg}", line=lineno) from None
            conv = parse_record(record, domain, line=lineno)
            sc = conv.scenario
            if isinstance(sc, CBScenario) and sc.buyer_target_price >= sc.listed_price:
                logger.warning(
                    "line %d: dropping conversation %s (buyer target %.2f >= listed %.2f)",
                    lineno, conv.id, sc.buyer_target_price, sc.listed_price,
                )
                continue
            conversations.append(conv)
    return conversations


def conversation_to_record(conv: Conversation) -> dict:
    utts = []
    for u in conv.utterances:
        item = {
            "turn": u.turn,
            "speaker": u.speaker.value,
            "text": u.text,
            "labels": [lab.value for lab in sorted(u.labels, key=lambda lab: lab.index)],
        }
        if u.persuasion_strategies:
            item["persuasion_strategies"] = list(u.persuasion_strategies)
        utts.append(item)
    sc = conv.scenario
    if isinstance(sc, CBScenario):
        scenario = {
            "listed_price": sc.listed_price,
            "buyer_target_price": sc.buyer_target_price,
            "sale_price": sc.sale_price,
            "deal_reached": sc.deal_reached,
        }
    elif isinstance(sc, P4GScenario):
        scenario = {"donation_amount": sc.donation_amount}
    else:
        scenario = {}
    return {"id": conv.id, "domain": conv.domain.value, "scenario": scenario, "utterances": utts}


def dump_corpus(conversations: Iterable[Conversation], path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for conv in conversations:
            fh.write(json.dumps(conversation_to_record(conv), ensure_ascii=False) + "\n")


# --------------------------------------------------------------- statistics


def _check_role(conversations, role):
    role = Role.parse(role) if isinstance(role, str) else role
    for conv in conversations:
        if role.domain is not conv.domain:
            raise PreconditionError(f"role {role.value} invalid for {conv.domain.value} conversation {conv.id}")
    return role


def label_distribution(conversations, role, seed: int = 0) -> dict:
    """Percentage of each strategy among one role's labeled utterances."""
    role = _check_role(conversations, role)
    counts = Counter(
        collapse_multilabel(u, seed)
        for conv in conversations
        for u in conv.labeled_utterances(role)
    )
    total = sum(counts.values())
    if total == 0:
        raise EmptyPopulationError(f"no labeled utterances for role {role.value}")
    return {lab: 100.0 * counts[lab] / total for lab in LABELS}


def multilabel_rate(conversations, role=None) -> float:
    """Fraction of labeled utterances (per utterance, not per label) carrying >1 label."""
    utts = [u for conv in conversations for u in conv.labeled_utterances(role)]
    if not utts:
        raise EmptyPopulationError("no labeled utterances")
    return sum(len(u.labels) > 1 for u in utts) / len(utts)


def corpus_stats(conversations) -> dict:
    if not conversations:
        raise EmptyPopulationError("corpus is empty")
    n_utts = [len(c.utterances) for c in conversations]
    n_toks = [len(u.tokens) for c in conversations for u in c.utterances]
    vocab = {t for c in conversations for u in c.utterances for t in u.tokens}
    labeled = [u for c in conversations for u in c.labeled_utterances()]
    return {
        "conversations": len(conversations),
        "max_utterances_per_conversation": max(n_utts),
        "avg_utterances_per_conversation": float(np.mean(n_utts)),
        "max_tokens_per_utterance": max(n_toks),
        "avg_tokens_per_utterance": float(np.mean(n_toks)),
        "vocabulary_size": len(vocab),
        "multilabel_utterance_fraction": (
            sum(len(u.labels) > 1 for u in labeled) / len(labeled) if labeled else 0.0
        ),
    }
