"""Token-embedding providers.

Two kinds exist: a trainable lookup table over the canonical tokenizer, and a
frozen pretrained contextual encoder (BERT-style, via ``transformers``) whose
subword vectors are mean-pooled back onto canonical tokens.
"""

import hashlib
import json
import logging
import os
import tempfile
from collections import Counter
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Optional

import numpy as np
import torch
from torch import nn

from .corpus import tokenize
from .errors import EmptyPopulationError, EmptyUtteranceError, PreconditionError, ProviderError

logger = logging.getLogger(__name__)

OOV = "<oov>"
CACHE_VERSION = 1


@dataclass(frozen=True)
class EmbedderSpec:
    kind: str = "lookup"  # "lookup" | "contextual"
    d_emb: int = 300
    trainable: bool = True
    model_name: str = "bert-base-uncased"
    max_norm: Optional[float] = None

    def __post_init__(self):
        if self.kind not in ("lookup", "contextual"):
            raise PreconditionError(f"unknown embedder kind {self.kind!r}")
        if self.d_emb <= 0:
            raise PreconditionError("d_emb must be positive")
        if self.kind == "contextual" and self.trainable:
            raise PreconditionError("contextual embeddings are frozen; trainable must be False")

    @classmethod
    def contextual(cls, model_name="bert-base-uncased", d_emb=768, **kw):
        return cls(kind="contextual", d_emb=d_emb, trainable=False, model_name=model_name, **kw)

    def fingerprint(self, extra: str = "") -> str:
        payload = json.dumps({**asdict(self), "v": CACHE_VERSION, "extra": extra}, sort_keys=True)
        return hashlib.sha256(payload.encode()).hexdigest()[:16]


@dataclass
class TokenEmbeddingSequence:
    vectors: np.ndarray
    tokens: list

    def __post_init__(self):
        if self.vectors.ndim != 2 or self.vectors.shape[0] < 1:
            raise PreconditionError("need a (K >= 1) x d_emb matrix")
        if self.vectors.shape[0] != len(self.tokens):
            raise PreconditionError("row count must equal token count")
        if not np.all(np.isfinite(self.vectors)):
            raise PreconditionError("embedding contains non-finite values")

    def __len__(self):
        return len(self.tokens)


class Vocabulary:
    """Token -> index map with the OOV sentinel at index 0."""

    def __init__(self, tokens):
        self.itos = [OOV] + [t for t in tokens if t != OOV]
        self.stoi = {t: i for i, t in enumerate(self.itos)}

    def __len__(self):
        return len(self.itos)

    def __getitem__(self, token):
        return self.stoi.get(token, 0)

    def __contains__(self, token):
        return token in self.stoi

    def encode(self, tokens):
        return [self[t] for t in tokens]

    def digest(self) -> str:
        return hashlib.sha256("\n".join(self.itos).encode()).hexdigest()[:16]

    def __eq__(self, other):
        return isinstance(other, Vocabulary) and self.itos == other.itos


def vocab_of(corpus) -> Vocabulary:
    """Vocabulary over a corpus, ordered by frequency (desc) then lexicographically."""
    if not corpus:
        raise EmptyPopulationError("cannot build a vocabulary from an empty corpus")
    counts = Counter(t for conv in corpus for u in conv.utterances for t in tokenize(u.text))
    ordered = sorted(counts, key=lambda t: (-counts[t], t))
    return Vocabulary(ordered)


def _renorm(vectors: np.ndarray, max_norm):
    if max_norm is None:
        return vectors
    norms = np.linalg.norm(vectors, axis=1, keepdims=True)
    scale = np.minimum(1.0, max_norm / np.maximum(norms, 1e-12))
    return vectors * scale


class LookupEmbedder(nn.Module):
    """Context-free trainable embedding table, initialised U(-0.1, 0.1)."""

    def __init__(self, vocab: Vocabulary, spec: EmbedderSpec):
        super().__init__()
        self.vocab = vocab
        self.spec = spec
        self.table = nn.Embedding(len(vocab), spec.d_emb, max_norm=spec.max_norm)
        nn.init.uniform_(self.table.weight, -0.1, 0.1)
        self.table.weight.requires_grad_(spec.trainable)

    def fingerprint(self) -> str:
        return self.spec.fingerprint(extra=self.vocab.digest())

    def ids(self, text: str) -> torch.Tensor:
        toks = tokenize(text)
        if not toks:
            raise EmptyUtteranceError(f"no tokens in {text!r}")
        return torch.tensor(self.vocab.encode(toks), dtype=torch.long)

    def forward(self, ids: torch.Tensor) -> torch.Tensor:
        return self.table(ids)

    def embed(self, text: str) -> TokenEmbeddingSequence:
        with torch.no_grad():
            vecs = self(self.ids(text)).double().numpy()
        return TokenEmbeddingSequence(vecs, tokenize(text))


class ContextualEmbedder:
    """Frozen pretrained encoder; final hidden layer, subwords mean-pooled per token.

    ``model`` and ``tokenizer`` may be supplied directly (any ``transformers``
    encoder + fast tokenizer); otherwise they are loaded from ``spec.model_name``.
    """

    def __init__(self, spec: EmbedderSpec, model=None, tokenizer=None, max_length: int = 512):
        self.spec = spec
        self.max_length = max_length
        if model is None or tokenizer is None:
            model, tokenizer = self._load(spec.model_name)
        self.model = model.eval()
        for p in self.model.parameters():
            p.requires_grad_(False)
        self.tokenizer = tokenizer
        self._memo = {}
        hidden = getattr(self.model.config, "hidden_size", None)
        if hidden is not None and hidden != spec.d_emb:
            raise ProviderError(f"encoder hidden size {hidden} != spec d_emb {spec.d_emb}")

    @staticmethod
    def _load(name):
        try:
            from transformers import AutoModel, AutoTokenizer
        except ImportError as exc:
            raise ProviderError(
                "the contextual embedder needs `transformers`; install with `pip install resper[contextual]`"
            ) from exc
        try:
            tokenizer = AutoTokenizer.from_pretrained(name, use_fast=True)
            model = AutoModel.from_pretrained(name)
        except Exception as exc:  # network, missing files, bad name
            raise ProviderError(
                f"could not load pretrained encoder {name!r} ({exc.__class__.__name__}: {exc}); "
                "download it once with network access or point --config model_name at a local directory"
            ) from exc
        return model, tokenizer

    def fingerprint(self) -> str:
        return self.spec.fingerprint()

    def embed(self, text: str) -> TokenEmbeddingSequence:
        # frozen encoder: the output is a pure function of the text
        if text not in self._memo:
            self._memo[text] = self._embed(text)
        return self._memo[text]

    @torch.no_grad()
    def _embed(self, text: str) -> TokenEmbeddingSequence:
        words = tokenize(text)
        if not words:
            raise EmptyUtteranceError(f"no tokens in {text!r}")
        enc = self.tokenizer(
            words, is_split_into_words=True, truncation=True,
            max_length=self.max_length, return_tensors="pt",
        )
        hidden = self.model(**enc).last_hidden_state[0].double().numpy()
        word_ids = enc.word_ids(0)
        out = np.zeros((len(words), hidden.shape[1]))
        counts = np.zeros(len(words))
        for pos, wid in enumerate(word_ids):
            if wid is not None:
                out[wid] += hidden[pos]
                counts[wid] += 1
        covered = counts > 0
        out[covered] /= counts[covered, None]
        if not covered.all():
            # words lost to truncation or with no subword pieces get the utterance mean
            out[~covered] = out[covered].mean(axis=0) if covered.any() else 0.0
        return TokenEmbeddingSequence(_renorm(out, self.spec.max_norm), words)


def embed_tokens(text: str, provider) -> TokenEmbeddingSequence:
    if not text or not text.strip():
        raise EmptyUtteranceError("empty utterance")
    seq = provider.embed(text)
    if provider.spec.kind == "lookup":
        seq = TokenEmbeddingSequence(_renorm(seq.vectors, provider.spec.max_norm), seq.tokens)
    return seq


class EmbeddingCache:
    """One ``.npz`` record per utterance under ``root/<fingerprint>/``.

    Records store the fingerprint they were written with; a mismatch (stale
    provider) is treated as a miss and overwritten. Writes go through a temp
    file + rename so concurrent readers never see partial records.
    """

    def __init__(self, root, fingerprint: str):
        self.fingerprint = fingerprint
        self.root = Path(root) / fingerprint
        self.root.mkdir(parents=True, exist_ok=True)

    def _path(self, conv_id: str, turn: int) -> Path:
        safe = hashlib.sha1(conv_id.encode()).hexdigest()[:20]
        return self.root / f"{safe}_{turn}.npz"

    def get(self, conv_id: str, turn: int) -> Optional[TokenEmbeddingSequence]:
        path = self._path(conv_id, turn)
        if not path.exists():
            return None
        try:
            with np.load(path, allow_pickle=False) as rec:
                if str(rec["fingerprint"]) != self.fingerprint or int(rec["version"]) != CACHE_VERSION:
                    logger.info("stale cache record %s ignored", path.name)
                    return None
                return TokenEmbeddingSequence(rec["vectors"], [str(t) for t in rec["tokens"]])
        except (OSError, KeyError, ValueError):
            return None

    def put(self, conv_id: str, turn: int, seq: TokenEmbeddingSequence) -> None:
        path = self._path(conv_id, turn)
        fd, tmp = tempfile.mkstemp(dir=self.root, suffix=".tmp")
        os.close(fd)
        try:
            with open(tmp, "wb") as fh:
                np.savez(
                    fh, vectors=seq.vectors.astype(np.float32), tokens=np.array(seq.tokens),
                    fingerprint=np.array(self.fingerprint), version=np.array(CACHE_VERSION),
                )
            os.replace(tmp, path)
        finally:
            if os.path.exists(tmp):
                os.unlink(tmp)


def precompute(conversations, provider, cache: Optional[EmbeddingCache] = None) -> dict:
    """Embed every utterance once; returns {(conv_id, turn): float32 matrix}."""
    out = {}
    for conv in conversations:
        for u in conv.utterances:
            seq = cache.get(conv.id, u.turn) if cache is not None else None
            if seq is None:
                seq = embed_tokens(u.text, provider)
                if cache is not None:
                    cache.put(conv.id, u.turn, seq)
            out[(conv.id, u.turn)] = np.asarray(seq.vectors, dtype=np.float32)
    return out
