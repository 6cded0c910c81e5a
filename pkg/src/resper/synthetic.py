"""Synthetic corpora in the JSONL schema, for tests and demos.

Utterances are drawn from small per-strategy template pools, so the labels
are learnable from text. Outcomes are sampled from a logistic model of the
strategy counts whose coefficients are given by ``effects``.
"""

import numpy as np

from .corpus import (
    LABELS,
    CBScenario,
    Conversation,
    Domain,
    P4GScenario,
    Role,
    StrategyLabel as S,
    Utterance,
)

TEMPLATES = {
    S.SourceDerogation: [
        "how do i know this charity is not a scam",
        "that sounds fake to me honestly",
        "this thing looks pretty worn and cheap",
        "i doubt they really use the money well",
    ],
    S.CounterArgument: [
        "but other places sell it for much less",
        "that is not really true though",
        "however the market price is lower than that",
        "yet the kids here need help too",
    ],
    S.PersonalChoice: [
        "i prefer to give to my own local church",
        "i would rather pay a little less for it",
        "i like to pick my own causes",
        "my choice would be a lower price",
    ],
    S.InformationInquiry: [
        "where does the money go exactly ?",
        "how old is it ?",
        "what does the charity do ?",
        "does it come with the original box ?",
    ],
    S.SelfPity: [
        "i am a poor student and barely get by",
        "money is very tight for me this month",
        "i really cannot afford much right now",
        "things have been hard for my family lately",
    ],
    S.Hesitance: [
        "let me think about it for a while",
        "maybe later , i am not sure yet",
        "i will consider it",
        "hmm i do not know about that",
    ],
    S.SelfAssertion: [
        "no , i will not donate today",
        "that is my final offer , take it or leave it",
        "i have made up my mind already",
        "i am firm on this",
    ],
    S.NotAStrategy: [
        "hello how are you doing today",
        "thanks , have a nice day",
        "sounds good to me",
        "ok great",
        "yes that works",
    ],
}

ER_TEMPLATES = {
    "logical-appeal": ["your donation will help children get food and schooling"],
    "emotion-appeal": ["imagine how sad those kids feel without help"],
    "credibility-appeal": ["save the children is a well known trusted charity"],
    "donation-information": ["you can donate any amount from your task payment"],
    "greeting": ["hi there , how is your day going"],
}

# Label distributions loosely follow the published corpus proportions but are
# flattened so every class appears in small fixtures.
DEFAULT_PROBS = {
    "EE": [0.06, 0.06, 0.08, 0.12, 0.06, 0.08, 0.06, 0.48],
    "BU": [0.08, 0.06, 0.10, 0.16, 0.07, 0.15, 0.06, 0.32],
    "SE": [0.04, 0.08, 0.10, 0.04, 0.04, 0.10, 0.08, 0.52],
}

DEFAULT_EFFECTS = {
    "EE": {S.SelfAssertion: 1.2, S.InformationInquiry: 0.3},
    "BU": {S.SelfAssertion: -1.2, S.NotAStrategy: 0.2},
    "SE": {S.CounterArgument: 0.6},
}


def _utterance_text(rng, label):
    return TEMPLATES[label][rng.integers(len(TEMPLATES[label]))]


def make_corpus(domain="CB", n_conversations=20, seed=0, min_turns=4, max_turns=12,
                label_probs=None, effects=None, multilabel_rate=0.0) -> list:
    domain = Domain(domain)
    rng = np.random.default_rng(seed)
    probs = {**DEFAULT_PROBS, **(label_probs or {})}
    effects = DEFAULT_EFFECTS if effects is None else effects
    convs = []
    for c in range(n_conversations):
        cid = f"{domain.value.lower()}-{seed}-{c:04d}"
        n_turns = int(rng.integers(min_turns, max_turns + 1))
        roles = (Role.ER, Role.EE) if domain is Domain.P4G else (Role.BU, Role.SE)
        utts, score = [], 0.0
        for t in range(n_turns):
            role = roles[t % 2]
            if role is Role.ER:
                strat = list(ER_TEMPLATES)[rng.integers(len(ER_TEMPLATES))]
                utts.append(Utterance(t, role, ER_TEMPLATES[strat][0], frozenset(), f"{cid}#{t}", (strat,)))
                continue
            lab = LABELS[rng.choice(len(LABELS), p=probs[role.value])]
            labels = {lab}
            text = _utterance_text(rng, lab)
            if lab is not S.NotAStrategy and rng.random() < multilabel_rate:
                other = LABELS[rng.integers(len(LABELS) - 1)]
                if other is not lab:
                    labels.add(other)
                    text = text + " and " + _utterance_text(rng, other)
            score += effects.get(role.value, {}).get(lab, 0.0)
            utts.append(Utterance(t, role, text, frozenset(labels), f"{cid}#{t}"))
        p = 1.0 / (1.0 + np.exp(-(score - 0.5)))
        success = rng.random() < p
        if domain is Domain.P4G:
            scenario = P4GScenario(0.0 if success else float(rng.choice([0.5, 1.0, 2.0])))
        else:
            listed = float(rng.integers(50, 500))
            target = round(listed * 0.7, 2)
            deal = rng.random() > 0.1
            # high ratio when seller succeeds
            ratio = float(rng.uniform(0.55, 1.0) if success else rng.uniform(0.0, 0.5))
            sale = round(target + ratio * (listed - target), 2) if deal else None
            scenario = CBScenario(listed, target, sale, bool(deal))
        convs.append(Conversation(cid, domain, tuple(utts), scenario))
    return convs
