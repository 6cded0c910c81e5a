"""Scikit-learn style estimator wrapping the strategy labelers."""

import logging
from pathlib import Path

import numpy as np
import torch
from sklearn.base import BaseEstimator

from .baselines import KINDS, build_network, uses_context
from .corpus import LABELS, Conversation, collapse_multilabel, tokenize
from .embeddings import (
    ContextualEmbedder,
    EmbedderSpec,
    EmbeddingCache,
    LookupEmbedder,
    Vocabulary,
    vocab_of,
)
from .errors import CheckpointError, PreconditionError
from .metrics import f1_scores
from .training import TrainConfig, train_network

logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "resper-checkpoint"
CHECKPOINT_VERSION = 1
EMPTY_TEXT = "<empty>"

_PROVIDERS = {}


def register_provider(provider) -> None:
    """Make a contextual provider available to estimators with a matching spec."""
    _PROVIDERS[provider.spec.fingerprint()] = provider


def get_provider(spec: EmbedderSpec):
    key = spec.fingerprint()
    if key not in _PROVIDERS:
        _PROVIDERS[key] = ContextualEmbedder(spec)
    return _PROVIDERS[key]


def check_conversations(X) -> list:
    """Validate estimator input: a non-empty sequence of Conversation objects."""
    if isinstance(X, Conversation):
        X = [X]
    X = list(X)
    if not X:
        raise PreconditionError("expected at least one conversation")
    for c in X:
        if not isinstance(c, Conversation):
            raise PreconditionError(f"expected Conversation objects, got {type(c).__name__}")
        if not c.utterances:
            raise PreconditionError(f"conversation {c.id} is empty")
    return X


def _text(u):
    return u.text if tokenize(u.text) else EMPTY_TEXT


class StrategyTagger(BaseEstimator):
    """Per-utterance resisting-strategy labeler.

    ``model`` picks the architecture: ``"resper"`` (hierarchical, causal
    context), ``"higru-sf"`` (hierarchical, bidirectional context),
    ``"bigru-sf"``, ``"bigru"``, ``"cnn"`` and ``"contextual-cnn"`` (no context).
    ``embedder`` is ``"lookup"`` (trainable table) or ``"contextual"`` (frozen
    pretrained encoder named by ``contextual_model``).

    ``fit`` takes a list of Conversation; targets default to the gold labels of
    the labeled-role utterances, multi-label sets collapsed with ``label_seed``.
    """

    def __init__(self, model="resper", embedder="contextual", d_emb=None, d_h1=1024, d_h2=300,
                 learning_rate=1e-4, max_epochs=99, lr_decay=0.5, decay_every=20, patience=5,
                 dropout=0.0, seed=0, label_seed=0, contextual_model="bert-base-uncased",
                 cache_dir=None, dtype="float32", cnn_maps=100):
        self.model = model
        self.embedder = embedder
        self.d_emb = d_emb
        self.d_h1 = d_h1
        self.d_h2 = d_h2
        self.learning_rate = learning_rate
        self.max_epochs = max_epochs
        self.lr_decay = lr_decay
        self.decay_every = decay_every
        self.patience = patience
        self.dropout = dropout
        self.seed = seed
        self.label_seed = label_seed
        self.contextual_model = contextual_model
        self.cache_dir = cache_dir
        self.dtype = dtype
        self.cnn_maps = cnn_maps

    # ------------------------------------------------------------ helpers

    @property
    def _torch_dtype(self):
        return {"float32": torch.float32, "float64": torch.float64}[self.dtype]

    def embedder_spec(self) -> EmbedderSpec:
        if self.embedder == "contextual":
            return EmbedderSpec.contextual(self.contextual_model, self.d_emb or 768)
        if self.embedder == "lookup":
            return EmbedderSpec("lookup", self.d_emb or 300, True)
        raise PreconditionError(f"embedder must be 'lookup' or 'contextual', got {self.embedder!r}")

    def train_config(self) -> TrainConfig:
        return TrainConfig(self.learning_rate, self.max_epochs, self.lr_decay, self.decay_every,
                           self.d_h1, self.d_h2, self.patience, seed=self.seed)

    def gold(self, conversation) -> list:
        return [collapse_multilabel(u, self.label_seed) for u in conversation.labeled_utterances()]

    def _inputs(self, conv):
        utts = conv.utterances if uses_context(self.model) else conv.labeled_utterances()
        if self.embedder == "lookup":
            return [self.lookup_.ids(_text(u)) for u in utts], utts
        provider = get_provider(self.spec_)
        cache = EmbeddingCache(self.cache_dir, self.fingerprint_) if self.cache_dir else None
        out = []
        for u in utts:
            seq = cache.get(conv.id, u.turn) if cache else None
            if seq is None:
                seq = provider.embed(_text(u))
                if cache:
                    cache.put(conv.id, u.turn, seq)
            out.append(torch.as_tensor(np.asarray(seq.vectors), dtype=self._torch_dtype))
        return out, utts

    def _build(self, vocab=None):
        if self.model not in KINDS:
            raise PreconditionError(f"unknown model {self.model!r}; expected one of {KINDS}")
        self.spec_ = self.embedder_spec()
        torch.manual_seed(self.seed)
        if self.spec_.kind == "lookup":
            self.lookup_ = LookupEmbedder(vocab, self.spec_)
            self.fingerprint_ = self.lookup_.fingerprint()
            emb_module = self.lookup_
        else:
            self.lookup_ = None
            self.fingerprint_ = self.spec_.fingerprint()
            emb_module = None
        self.network_ = build_network(
            self.model, self.spec_.d_emb, self.d_h1, self.d_h2,
            embedder=emb_module, dropout=self.dropout, cnn_maps=self.cnn_maps,
        ).to(self._torch_dtype)
        self.classes_ = LABELS

    def _targets(self, conv, utts, labels):
        index = {u.uid: i for i, u in enumerate(conv.labeled_utterances())}
        return torch.tensor(
            [labels[index[u.uid]].index if u.uid in index else -1 for u in utts], dtype=torch.long
        )

    # ------------------------------------------------------------ estimator API

    def fit(self, X, y=None):
        X = check_conversations(X)
        if y is not None and len(y) != len(X):
            raise PreconditionError("y must hold one label list per conversation")
        config = self.train_config()
        vocab = vocab_of(X) if self.embedder == "lookup" else None
        self._build(vocab)
        examples = []
        for i, conv in enumerate(X):
            labels = list(y[i]) if y is not None else self.gold(conv)
            if len(labels) != len(conv.labeled_utterances()):
                raise PreconditionError(f"conversation {conv.id}: label count mismatch")
            inputs, utts = self._inputs(conv)
            if utts:
                examples.append((conv.id, inputs, self._targets(conv, utts, labels)))
        self.history_ = train_network(self.network_, examples, config)
        return self

    @torch.no_grad()
    def predict_proba(self, X) -> list:
        """One (n_labeled_utterances, 8) probability array per conversation."""
        self._check_fitted()
        X = check_conversations(X)
        self.network_.eval()
        out = []
        for conv in X:
            inputs, utts = self._inputs(conv)
            if not utts:
                out.append(np.zeros((0, len(LABELS))))
                continue
            probs = torch.softmax(self.network_(inputs), dim=-1).double().numpy()
            keep = [i for i, u in enumerate(utts) if u.is_labeled]
            out.append(probs[keep])
        return out

    def predict(self, X) -> list:
        # np.argmax returns the first maximum: ties go to the lowest label index
        return [[LABELS[i] for i in np.argmax(p, axis=1)] for p in self.predict_proba(X)]

    def score(self, X, y=None) -> float:
        """Pooled macro-F1 over all labeled utterances."""
        X = check_conversations(X)
        y = y if y is not None else [self.gold(c) for c in X]
        preds = self.predict(X)
        return f1_scores([l for ys in y for l in ys], [l for ps in preds for l in ps])[0]

    def _check_fitted(self):
        if not hasattr(self, "network_"):
            from sklearn.exceptions import NotFittedError

            raise NotFittedError("StrategyTagger is not fitted yet; call fit first")

    # ------------------------------------------------------------ persistence

    def save(self, path) -> None:
        self._check_fitted()
        torch.save(
            {
                "format": CHECKPOINT_FORMAT,
                "version": CHECKPOINT_VERSION,
                "kind": self.model,
                "params": self.get_params(),
                "fingerprint": self.fingerprint_,
                "labels": [lab.value for lab in LABELS],
                "vocab": self.lookup_.vocab.itos if self.lookup_ is not None else None,
                "state_dict": self.network_.state_dict(),
                "history": getattr(self, "history_", []),
            },
            path,
        )

    @classmethod
    def load(cls, path, **overrides) -> "StrategyTagger":
        try:
            ckpt = torch.load(Path(path), map_location="cpu", weights_only=False)
        except Exception as exc:
            raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
        if not isinstance(ckpt, dict) or ckpt.get("format") != CHECKPOINT_FORMAT:
            raise CheckpointError(f"{path} is not a resper checkpoint")
        if ckpt.get("version") != CHECKPOINT_VERSION:
            raise CheckpointError(f"unsupported checkpoint version {ckpt.get('version')}")
        if ckpt["labels"] != [lab.value for lab in LABELS]:
            raise CheckpointError("checkpoint label vocabulary differs from this build")
        est = cls(**{**ckpt["params"], **overrides})
        vocab = Vocabulary(ckpt["vocab"][1:]) if ckpt["vocab"] is not None else None
        est._build(vocab)
        if est.fingerprint_ != ckpt["fingerprint"]:
            raise CheckpointError(
                f"embedder fingerprint {est.fingerprint_} does not match checkpoint {ckpt['fingerprint']}"
            )
        est.network_.load_state_dict(ckpt["state_dict"])
        est.network_.eval()
        est.history_ = ckpt.get("history", [])
        return est


def classify_utterance(utterance, tagger: StrategyTagger) -> np.ndarray:
    """Distribution for one utterance in isolation (context-free models)."""
    conv = Conversation(utterance.uid or "single", utterance.speaker.domain, (utterance,))
    return tagger.predict_proba([conv])[0][0]
