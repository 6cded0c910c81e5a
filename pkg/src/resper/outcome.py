"""Conversation success labels and strategy-sequence outcome prediction."""

import json
import logging

import numpy as np
import torch
from sklearn.base import BaseEstimator, ClassifierMixin
from torch import nn
from torch.nn.utils.rnn import pack_sequence

from .corpus import CBScenario, Domain, P4GScenario, collapse_multilabel
from .errors import (
    DegenerateScenarioError,
    EmptyPopulationError,
    MetadataError,
    NoSaleError,
    PreconditionError,
    VocabularyError,
)
from .metrics import MetricsReport
from .model import glorot_init_
from .training import assert_no_leak, make_folds

logger = logging.getLogger(__name__)

OUTCOME_LABELS = ("unsuccessful", "successful")
SUBSETS = {
    Domain.P4G: {"EE": ("EE",), "ER": ("ER",), "both": ("ER", "EE")},
    Domain.CB: {"BU": ("BU",), "SE": ("SE",), "both": ("BU", "SE")},
}


# ------------------------------------------------------------ success labels


def cb_ratio(listed_price, buyer_target_price, sale_price) -> float:
    """(sale - buyer target) / (listed - buyer target)."""
    if sale_price is None:
        raise NoSaleError("no sale price: the deal was not completed")
    denom = listed_price - buyer_target_price
    if denom == 0:
        raise DegenerateScenarioError("listed price equals buyer target price")
    return (sale_price - buyer_target_price) / denom


def _ratio(conv):
    sc = conv.scenario
    return cb_ratio(sc.listed_price, sc.buyer_target_price, sc.sale_price)


def cb_success(conversations) -> dict:
    """Seller success iff the sale-to-list ratio is strictly above the corpus median.

    The median is over completed deals only; no-deal conversations count as failures.
    """
    for c in conversations:
        if not isinstance(c.scenario, CBScenario):
            raise MetadataError(f"conversation {c.id} has no CB scenario")
    ratios = {c.id: _ratio(c) for c in conversations if c.scenario.completed}
    if not ratios:
        raise EmptyPopulationError("no completed deals")
    median = float(np.median(list(ratios.values())))
    return {c.id: (c.id in ratios and ratios[c.id] > median) for c in conversations}


def p4g_success(conversation) -> bool:
    """Resistance succeeded iff the persuadee donated nothing."""
    sc = conversation.scenario
    if not isinstance(sc, P4GScenario) or sc.donation_amount is None:
        raise MetadataError(f"conversation {conversation.id} has no donation amount")
    if sc.donation_amount < 0:
        raise MetadataError(f"conversation {conversation.id} has negative donation {sc.donation_amount}")
    return sc.donation_amount == 0


def success_labels(conversations) -> dict:
    domains = {c.domain for c in conversations}
    if len(domains) != 1:
        raise PreconditionError("conversations must come from a single domain")
    if domains.pop() is Domain.CB:
        return cb_success(conversations)
    return {c.id: p4g_success(c) for c in conversations}


# ------------------------------------------------------------ sequences


def strategy_sequence(conversation, subset: str, seed: int = 0, predicted=None) -> list:
    """Turn-ordered ``"<party>:<strategy>"`` tokens for the chosen party subset.

    ER tokens come from the upstream persuasion-strategy annotations. When
    ``predicted`` (a list of labels for the labeled-role utterances, e.g. a
    tagger's output) is given it replaces the gold resisting-strategy labels.
    """
    parties = SUBSETS[conversation.domain].get(subset)
    if parties is None:
        raise PreconditionError(f"subset {subset!r} invalid for {conversation.domain.value}")
    labeled = conversation.labeled_utterances()
    if predicted is not None and len(predicted) != len(labeled):
        raise PreconditionError("predicted labels must align with labeled utterances")
    pred_of = {u.uid: p for u, p in zip(labeled, predicted)} if predicted is not None else {}
    tokens = []
    for u in conversation.utterances:
        party = u.speaker.value
        if party not in parties:
            continue
        if u.is_labeled:
            lab = pred_of.get(u.uid) if predicted is not None else collapse_multilabel(u, seed)
            tokens.append(f"{party}:{getattr(lab, 'value', lab)}")
        else:
            tokens.extend(f"{party}:{s}" for s in u.persuasion_strategies)
    return tokens


# ------------------------------------------------------------ classifier


class OutcomeNet(nn.Module):
    """Strategy embedding -> uni-directional GRU -> final state -> 2-way projection."""

    def __init__(self, n_tokens, emb_dim=64, hidden=64):
        super().__init__()
        self.embedding = nn.Embedding(n_tokens, emb_dim)
        self.gru = nn.GRU(emb_dim, hidden, batch_first=True)
        self.projection = nn.Linear(hidden, 2)
        glorot_init_(self)
        nn.init.normal_(self.embedding.weight)

    def forward(self, sequences) -> torch.Tensor:
        """List of 1-D LongTensors -> (B, 2) logits. Packed, so no pad enters the GRU."""
        packed = pack_sequence([self.embedding(s) for s in sequences], enforce_sorted=False)
        _, h_n = self.gru(packed)
        return self.projection(h_n[-1])


def classify_outcome(sequence, net: OutcomeNet, vocabulary: dict) -> float:
    """Probability of success for one strategy sequence."""
    if not sequence:
        raise PreconditionError("empty strategy sequence")
    missing = [t for t in sequence if t not in vocabulary]
    if missing:
        raise VocabularyError(f"tokens outside the subset vocabulary: {missing[:5]}")
    ids = torch.tensor([vocabulary[t] for t in sequence], dtype=torch.long)
    with torch.no_grad():
        return float(torch.softmax(net([ids]), dim=-1)[0, 1])


class OutcomePredictor(BaseEstimator, ClassifierMixin):
    """Binary outcome classifier over strategy-token sequences.

    ``X`` is a list of token lists; ``y`` holds 0/1 outcomes. ``vocabulary``
    fixes the token inventory up front (otherwise it is read from ``X`` at fit).
    """

    def __init__(self, emb_dim=64, hidden=64, learning_rate=1e-3, max_epochs=30, batch_size=16,
                 seed=0, vocabulary=None, dtype="float32"):
        self.emb_dim = emb_dim
        self.hidden = hidden
        self.learning_rate = learning_rate
        self.max_epochs = max_epochs
        self.batch_size = batch_size
        self.seed = seed
        self.vocabulary = vocabulary
        self.dtype = dtype

    def _encode(self, X):
        out = []
        for seq in X:
            if len(seq) == 0:
                raise PreconditionError("empty strategy sequence")
            try:
                out.append(torch.tensor([self.vocabulary_[t] for t in seq], dtype=torch.long))
            except KeyError as exc:
                raise VocabularyError(f"token {exc.args[0]!r} outside the subset vocabulary") from None
        return out

    def fit(self, X, y):
        X = list(X)
        y = np.asarray(y).astype(int)
        if len(X) != len(y) or not len(X):
            raise PreconditionError("X and y must be non-empty and of equal length")
        tokens = self.vocabulary if self.vocabulary is not None else sorted({t for s in X for t in s})
        self.vocabulary_ = {t: i for i, t in enumerate(tokens)}
        self.classes_ = np.array([0, 1])
        torch.manual_seed(self.seed)
        dtype = {"float32": torch.float32, "float64": torch.float64}[self.dtype]
        self.network_ = OutcomeNet(len(self.vocabulary_), self.emb_dim, self.hidden).to(dtype)
        seqs = self._encode(X)
        target = torch.as_tensor(y, dtype=torch.long)
        opt = torch.optim.Adam(self.network_.parameters(), lr=self.learning_rate)
        rng = np.random.default_rng(self.seed)
        self.history_ = []
        self.network_.train()
        for epoch in range(self.max_epochs):
            order = rng.permutation(len(seqs))
            losses = []
            for start in range(0, len(order), self.batch_size):
                idx = order[start : start + self.batch_size]
                logits = self.network_([seqs[i] for i in idx])
                loss = nn.functional.cross_entropy(logits, target[idx])
                opt.zero_grad()
                loss.backward()
                opt.step()
                losses.append(loss.item())
            self.history_.append(float(np.mean(losses)))
        self.network_.eval()
        return self

    def predict_proba(self, X) -> np.ndarray:
        seqs = self._encode(X)
        with torch.no_grad():
            return torch.softmax(self.network_(seqs), dim=-1).double().numpy()

    def predict(self, X) -> np.ndarray:
        return np.argmax(self.predict_proba(X), axis=1)


def outcome_experiment(conversations, subset: str, k: int = 5, seed: int = 0,
                       estimator: OutcomePredictor = None, predicted=None, label_seed: int = 0):
    """k-fold CV of the outcome classifier on one party subset.

    ``predicted`` optionally maps conversation id -> predicted strategy labels
    (defaults to gold). Conversations whose subset sequence is empty are left
    out; the count is logged and stored on the returned report.
    """
    from sklearn.base import clone

    if not conversations:
        raise EmptyPopulationError("no conversations")
    outcomes = success_labels(conversations)
    seqs = {}
    for c in conversations:
        seq = strategy_sequence(c, subset, label_seed, predicted.get(c.id) if predicted else None)
        if seq:
            seqs[c.id] = seq
    dropped = len(conversations) - len(seqs)
    if dropped:
        logger.warning("%d conversations have no %s strategies and are left out", dropped, subset)
    kept = [c for c in conversations if c.id in seqs]
    vocab = sorted({t for s in seqs.values() for t in s})
    base = estimator if estimator is not None else OutcomePredictor(seed=seed)
    base = clone(base).set_params(vocabulary=vocab)
    fold_results = []
    for f, test_ids in enumerate(make_folds(kept, k, seed)):
        test_set = set(test_ids)
        train_ids = [c.id for c in kept if c.id not in test_set]
        assert_no_leak(train_ids, test_ids)
        est = clone(base).set_params(seed=base.seed + f)
        est.fit([seqs[i] for i in train_ids], [int(outcomes[i]) for i in train_ids])
        pred = est.predict([seqs[i] for i in test_ids])
        fold_results.append(([int(outcomes[i]) for i in test_ids], [int(p) for p in pred]))
    report = MetricsReport.from_folds(fold_results, labels=OUTCOME_LABELS)
    report.meta = {"subset": subset, "n_conversations": len(kept), "n_dropped": dropped}
    return report


def outcome_row(subset: str, report: MetricsReport) -> dict:
    return {"subset": subset, "macro_f1": report.mean_macro_f1, "weighted_f1": report.mean_weighted_f1}


def outcome_report_json(rows, path=None) -> str:
    text = json.dumps(rows, indent=2, sort_keys=True)
    if path is not None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
    return text
