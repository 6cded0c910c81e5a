"""Hierarchical strategy labeler.

Utterance level: BiGRU over token embeddings, per-direction self-attention,
fusion ``tanh(W[ah_f; h_f; e; h_b; ah_b] + b)`` and max-pooling over tokens.
Conversation level: GRU over utterance vectors, causally masked
self-attention, fusion ``tanh(W[AH; H; e(u)] + b)`` and a linear projection
onto the strategy labels.
"""

import math

import numpy as np
import torch
from torch import nn
from torch.nn.utils.rnn import pack_sequence, pad_packed_sequence

from .corpus import N_LABELS
from .errors import PreconditionError, ShapeError

PROB_FLOOR = 1e-8


def glorot_init_(module: nn.Module) -> None:
    """Uniform Glorot weights and zero biases for every GRU / Linear below ``module``."""
    for m in module.modules():
        if isinstance(m, nn.Linear):
            nn.init.xavier_uniform_(m.weight)
            if m.bias is not None:
                nn.init.zeros_(m.bias)
        elif isinstance(m, nn.GRU):
            for name, p in m.named_parameters():
                if name.startswith("weight"):
                    # per gate block, so each square-ish block gets its own fan
                    for block in p.data.chunk(3, dim=0):
                        nn.init.xavier_uniform_(block)
                else:
                    nn.init.zeros_(p)


class SelfAttention(nn.Module):
    """Single-head scaled dot-product attention with learned Q/K/V maps."""

    def __init__(self, dim: int):
        super().__init__()
        self.dim = dim
        self.query = nn.Linear(dim, dim)
        self.key = nn.Linear(dim, dim)
        self.value = nn.Linear(dim, dim)

    def forward(self, h: torch.Tensor, mask: torch.Tensor = None) -> torch.Tensor:
        # h: (..., L, dim); mask: broadcastable (..., L, L), True = may attend
        q, k, v = self.query(h), self.key(h), self.value(h)
        scores = q @ k.transpose(-1, -2) / math.sqrt(self.dim)
        if mask is not None:
            scores = scores.masked_fill(~mask, float("-inf"))
        weights = torch.softmax(scores, dim=-1)
        return weights @ v


def causal_mask(n: int, device=None) -> torch.Tensor:
    return torch.ones(n, n, dtype=torch.bool, device=device).tril()


class UtteranceEncoder(nn.Module):
    def __init__(self, d_emb: int, d_h1: int, d_u: int = None, attention: bool = True):
        super().__init__()
        self.d_emb, self.d_h1 = d_emb, d_h1
        self.d_u = d_u or d_emb
        self.attention = attention
        self.gru = nn.GRU(d_emb, d_h1, batch_first=True, bidirectional=True)
        if attention:
            self.attn_fwd = SelfAttention(d_h1)
            self.attn_bwd = SelfAttention(d_h1)
            fused_in = 4 * d_h1 + d_emb
        else:
            fused_in = 2 * d_h1 + d_emb
        self.fusion = nn.Linear(fused_in, self.d_u)

    def fused_tokens(self, utterances):
        """Per-token fused vectors e_c(w_k), padded: returns (B, K_max, d_u) and lengths."""
        for x in utterances:
            if x.dim() != 2 or x.shape[1] != self.d_emb:
                raise ShapeError(f"expected (K, {self.d_emb}) token matrix, got {tuple(x.shape)}")
            if x.shape[0] < 1:
                raise ShapeError("utterance has no tokens")
        lengths = torch.tensor([x.shape[0] for x in utterances])
        packed = pack_sequence(list(utterances), enforce_sorted=False)
        out, _ = self.gru(packed)
        out, _ = pad_packed_sequence(out, batch_first=True)
        emb, _ = pad_packed_sequence(packed, batch_first=True)
        h_fwd, h_bwd = out[..., : self.d_h1], out[..., self.d_h1 :]
        kmax = out.shape[1]
        valid = torch.arange(kmax)[None, :] < lengths[:, None]  # (B, K)
        if self.attention:
            mask = valid[:, None, :].expand(-1, kmax, -1)
            ah_fwd = self.attn_fwd(h_fwd, mask)
            ah_bwd = self.attn_bwd(h_bwd, mask)
            cat = torch.cat([ah_fwd, h_fwd, emb, h_bwd, ah_bwd], dim=-1)
        else:
            cat = torch.cat([h_fwd, emb, h_bwd], dim=-1)
        return torch.tanh(self.fusion(cat)), valid

    def forward(self, utterances) -> torch.Tensor:
        """List of (K_i, d_emb) tensors -> (B, d_u) utterance vectors (max over tokens).

        Utterances are encoded one at a time: BLAS results depend on batch
        shape in the last bit, and e(u_j) must be a function of u_j alone for
        the conversation model to be exactly causal.
        """
        out = []
        for x in utterances:
            fused, _ = self.fused_tokens([x])
            out.append(fused[0].max(dim=0).values)
        return torch.stack(out)


class ConversationEncoder(nn.Module):
    """GRU + masked self-attention + fusion over a sequence of utterance vectors.

    ``direction="causal"`` is the uni-directional, future-blind encoder;
    ``"bidirectional"`` (HiGRU-style) reads the whole conversation with an
    unmasked attention.
    """

    def __init__(self, d_u: int, d_h2: int, d_c: int = None, direction: str = "causal"):
        super().__init__()
        if direction not in ("causal", "bidirectional"):
            raise PreconditionError(f"unknown direction {direction!r}")
        self.direction = direction
        self.d_u, self.d_h2 = d_u, d_h2
        self.d_c = d_c or d_u
        bi = direction == "bidirectional"
        self.d_state = 2 * d_h2 if bi else d_h2
        self.gru = nn.GRU(d_u, d_h2, batch_first=True, bidirectional=bi)
        self.attn = SelfAttention(self.d_state)
        self.fusion = nn.Linear(2 * self.d_state + d_u, self.d_c)

    def forward(self, utt_vecs: torch.Tensor) -> torch.Tensor:
        """(J, d_u) -> (J, d_c)."""
        if utt_vecs.dim() != 2 or utt_vecs.shape[0] < 1:
            raise PreconditionError("need a non-empty (J, d_u) sequence of utterance vectors")
        h, _ = self.gru(utt_vecs[None])
        h = h[0]
        mask = causal_mask(h.shape[0]) if self.direction == "causal" else None
        ah = self.attn(h, mask)
        return torch.tanh(self.fusion(torch.cat([ah, h, utt_vecs], dim=-1)))


class ResPerNet(nn.Module):
    """Full labeler. ``context`` in {"causal", "bidirectional", "none"}.

    ``context="none"`` drops the conversation encoder and classifies e(u_j)
    directly (the BiGRU-sf ablation).
    """

    def __init__(self, d_emb, d_h1=1024, d_h2=300, d_u=None, d_c=None,
                 context="causal", embedder: nn.Module = None, dropout=0.0, n_labels=N_LABELS):
        super().__init__()
        self.embedder = embedder
        self.context = context
        self.utterance_encoder = UtteranceEncoder(d_emb, d_h1, d_u)
        d_u = self.utterance_encoder.d_u
        if context == "none":
            self.conversation_encoder = None
            d_out = d_u
        else:
            self.conversation_encoder = ConversationEncoder(d_u, d_h2, d_c, direction=context)
            d_out = self.conversation_encoder.d_c
        self.dropout = nn.Dropout(dropout)
        self.classifier = nn.Linear(d_out, n_labels)
        glorot_init_(self)

    def embed_inputs(self, inputs):
        if self.embedder is None:
            return list(inputs)
        return [self.embedder(x) for x in inputs]

    def contextual_vectors(self, inputs) -> torch.Tensor:
        utt = self.utterance_encoder(self.embed_inputs(inputs))
        if self.conversation_encoder is None:
            return utt
        return self.conversation_encoder(utt)

    def forward(self, inputs) -> torch.Tensor:
        """One conversation's utterances -> (J, n_labels) logits."""
        vecs = self.dropout(self.contextual_vectors(inputs))
        # row by row, so a row's logits never depend on how many rows there are
        return torch.stack([self.classifier(v) for v in vecs])

    def predict_proba(self, inputs) -> torch.Tensor:
        return torch.softmax(self(inputs), dim=-1)


def encode_utterance(tokens, encoder: UtteranceEncoder) -> torch.Tensor:
    """e(u_j) for one utterance; ``tokens`` is a TokenEmbeddingSequence or (K, d_emb) array."""
    vecs = getattr(tokens, "vectors", tokens)
    param = next(encoder.parameters())
    x = torch.as_tensor(np.asarray(vecs), dtype=param.dtype)
    return encoder([x])[0]


def encode_conversation(utterance_vectors, encoder: ConversationEncoder) -> torch.Tensor:
    if len(utterance_vectors) == 0:
        raise PreconditionError("empty conversation")
    param = next(encoder.parameters())
    if isinstance(utterance_vectors, torch.Tensor):
        x = utterance_vectors.to(param.dtype)
    else:
        x = torch.stack([torch.as_tensor(np.asarray(v), dtype=param.dtype) for v in utterance_vectors])
    return encoder(x)


def strategy_loss(predictions, gold) -> torch.Tensor:
    """Mean NLL of the gold labels; probabilities clamped to [1e-8, 1].

    ``predictions`` is a (J, n_labels) probability tensor or a list of
    probability vectors; ``gold`` holds label indices or StrategyLabel members.
    """
    if isinstance(predictions, torch.Tensor):
        probs = predictions
    else:
        probs = torch.stack([torch.as_tensor(np.asarray(p, dtype=float)) for p in predictions])
    if len(gold) != probs.shape[0]:
        raise PreconditionError(f"{probs.shape[0]} predictions but {len(gold)} gold labels")
    if len(gold) == 0:
        raise PreconditionError("need at least one prediction")
    idx = torch.tensor([getattr(g, "index", g) for g in gold], dtype=torch.long)
    picked = probs.gather(1, idx[:, None]).squeeze(1)
    return -torch.log(picked.clamp(PROB_FLOOR, 1.0)).mean()
