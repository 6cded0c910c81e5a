"""Utterance-level comparison systems.

All classifiers share ResPerNet's call convention (list of per-utterance
token inputs -> (J, n_labels) logits) so they plug into the same trainer.
"""

import torch
import torch.nn.functional as F
from torch import nn
from torch.nn.utils.rnn import pack_sequence

from .corpus import N_LABELS
from .errors import PreconditionError
from .model import ResPerNet, glorot_init_

KINDS = ("resper", "cnn", "contextual-cnn", "bigru", "bigru-sf", "higru-sf")

# CLI spelling -> (architecture, embedder kind)
CLI_MODELS = {
    "resper": ("resper", "contextual"),
    "cnn": ("cnn", "lookup"),
    "bert-cnn": ("contextual-cnn", "contextual"),
    "bigru": ("bigru", "contextual"),
    "bigru-sf": ("bigru-sf", "contextual"),
    "higru-sf": ("higru-sf", "lookup"),
}


class CNNClassifier(nn.Module):
    """Parallel 1-D convolutions, max-over-time pooling, linear head.

    Utterances shorter than the widest window are zero-padded on the right.
    """

    def __init__(self, d_emb, windows=(3, 4, 5), n_maps=100, embedder=None, dropout=0.0, n_labels=N_LABELS):
        super().__init__()
        self.embedder = embedder
        self.windows = tuple(windows)
        self.convs = nn.ModuleList(nn.Conv1d(d_emb, n_maps, w) for w in self.windows)
        self.dropout = nn.Dropout(dropout)
        self.classifier = nn.Linear(n_maps * len(self.windows), n_labels)
        glorot_init_(self)

    def encode(self, x: torch.Tensor) -> torch.Tensor:
        """(K, d_emb) -> pooled feature vector."""
        width = max(self.windows)
        if x.shape[0] < width:
            x = F.pad(x, (0, 0, 0, width - x.shape[0]))
        x = x.t()[None]  # (1, d_emb, K)
        feats = [torch.relu(conv(x)).max(dim=-1).values[0] for conv in self.convs]
        return torch.cat(feats)

    def forward(self, inputs) -> torch.Tensor:
        if self.embedder is not None:
            inputs = [self.embedder(x) for x in inputs]
        feats = torch.stack([self.encode(x) for x in inputs])
        return self.classifier(self.dropout(feats))


class BiGRUClassifier(nn.Module):
    """BiGRU over tokens; final forward and backward states feed a linear head."""

    def __init__(self, d_emb, d_h1=1024, embedder=None, dropout=0.0, n_labels=N_LABELS):
        super().__init__()
        self.embedder = embedder
        self.gru = nn.GRU(d_emb, d_h1, batch_first=True, bidirectional=True)
        self.dropout = nn.Dropout(dropout)
        self.classifier = nn.Linear(2 * d_h1, n_labels)
        glorot_init_(self)

    def forward(self, inputs) -> torch.Tensor:
        if self.embedder is not None:
            inputs = [self.embedder(x) for x in inputs]
        _, h_n = self.gru(pack_sequence(list(inputs), enforce_sorted=False))
        feats = torch.cat([h_n[0], h_n[1]], dim=-1)
        return self.classifier(self.dropout(feats))


def build_network(kind, d_emb, d_h1=1024, d_h2=300, d_u=None, d_c=None,
                  embedder=None, dropout=0.0, cnn_maps=100, cnn_windows=(3, 4, 5)) -> nn.Module:
    if kind == "resper":
        return ResPerNet(d_emb, d_h1, d_h2, d_u, d_c, "causal", embedder, dropout)
    if kind == "bigru-sf":
        return ResPerNet(d_emb, d_h1, d_h2, d_u, d_c, "none", embedder, dropout)
    if kind == "higru-sf":
        return ResPerNet(d_emb, d_h1, d_h2, d_u, d_c, "bidirectional", embedder, dropout)
    if kind in ("cnn", "contextual-cnn"):
        return CNNClassifier(d_emb, cnn_windows, cnn_maps, embedder, dropout)
    if kind == "bigru":
        return BiGRUClassifier(d_emb, d_h1, embedder, dropout)
    raise PreconditionError(f"unknown model kind {kind!r}; expected one of {KINDS}")


def uses_context(kind: str) -> bool:
    return kind in ("resper", "higru-sf")
