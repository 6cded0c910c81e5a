"""Classification metrics, confusion matrices and paired-bootstrap significance."""

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .corpus import LABELS, N_LABELS
from .errors import PreconditionError


def _as_indices(labels) -> np.ndarray:
    return np.array([getattr(lab, "index", lab) for lab in labels], dtype=np.int64)


def _check_pair(y_true, y_pred, allow_empty=False):
    if len(y_true) != len(y_pred):
        raise PreconditionError(f"length mismatch: {len(y_true)} true vs {len(y_pred)} predicted")
    if not allow_empty and len(y_true) == 0:
        raise PreconditionError("need at least one instance")
    return _as_indices(y_true), _as_indices(y_pred)


def confusion(y_true, y_pred, n_classes: int = N_LABELS) -> np.ndarray:
    """Counts with rows = true class, columns = predicted class."""
    t, p = _check_pair(y_true, y_pred, allow_empty=True)
    return np.bincount(t * n_classes + p, minlength=n_classes * n_classes).reshape(n_classes, n_classes)


def f1_from_confusion(cm: np.ndarray):
    """(macro, weighted) F1 from a confusion matrix (or a stack of them on axis 0).

    Macro averages over classes with true support; a supported class with no
    correct prediction scores 0. Weighted uses true-class support as weights.
    """
    cm = np.asarray(cm, dtype=float)
    tp = np.diagonal(cm, axis1=-2, axis2=-1)
    support = cm.sum(axis=-1)
    predicted = cm.sum(axis=-2)
    denom = support + predicted
    with np.errstate(invalid="ignore", divide="ignore"):
        f1 = np.where(denom > 0, 2 * tp / np.where(denom > 0, denom, 1), 0.0)
    present = support > 0
    n_present = present.sum(axis=-1)
    total = support.sum(axis=-1)
    macro = (f1 * present).sum(axis=-1) / np.maximum(n_present, 1)
    weighted = (f1 * support).sum(axis=-1) / np.maximum(total, 1)
    return macro, weighted


def f1_scores(y_true, y_pred, n_classes: int = N_LABELS):
    _check_pair(y_true, y_pred)
    macro, weighted = f1_from_confusion(confusion(y_true, y_pred, n_classes))
    return float(macro), float(weighted)


def metric_gain(y_true, preds_a, preds_b, metric="macro", n_classes=N_LABELS) -> float:
    """metric(B) - metric(A)."""
    which = _metric_index(metric)
    return f1_scores(y_true, preds_b, n_classes)[which] - f1_scores(y_true, preds_a, n_classes)[which]


def _metric_index(metric):
    if metric not in ("macro", "weighted"):
        raise PreconditionError(f"metric must be 'macro' or 'weighted', got {metric!r}")
    return 0 if metric == "macro" else 1


def paired_bootstrap(y_true, preds_a, preds_b, n_resamples=10_000, metric="macro",
                     seed=0, n_classes=N_LABELS) -> float:
    """Paired bootstrap p-value for the difference between two systems.

    The observed gain ``g = metric(B) - metric(A)`` is oriented toward the
    better system; the p-value is the fraction of resamples whose oriented
    gain exceeds ``2|g|``. Identical systems (g = 0) give p = 1.
    """
    t, a = _check_pair(y_true, preds_a)
    _, b = _check_pair(y_true, preds_b)
    if n_resamples < 1000:
        raise PreconditionError("n_resamples must be >= 1000")
    which = _metric_index(metric)
    gain = metric_gain(t, a, b, metric, n_classes)
    if gain == 0.0:
        return 1.0
    sign = 1.0 if gain > 0 else -1.0
    rng = np.random.default_rng(seed)
    n = len(t)
    exceed = 0
    chunk = max(1, 2_000_000 // max(n, 1))
    done = 0
    while done < n_resamples:
        m = min(chunk, n_resamples - done)
        idx = rng.integers(0, n, size=(m, n))
        rows = np.arange(m)[:, None] * n_classes * n_classes
        cm_a = np.bincount((rows + t[idx] * n_classes + a[idx]).ravel(),
                           minlength=m * n_classes * n_classes).reshape(m, n_classes, n_classes)
        cm_b = np.bincount((rows + t[idx] * n_classes + b[idx]).ravel(),
                           minlength=m * n_classes * n_classes).reshape(m, n_classes, n_classes)
        g = f1_from_confusion(cm_b)[which] - f1_from_confusion(cm_a)[which]
        exceed += int(np.sum(sign * g > 2 * abs(gain)))
        done += m
    return exceed / n_resamples


@dataclass
class MetricsReport:
    folds: list = field(default_factory=list)  # [{"macro_f1":..., "weighted_f1":...}]
    confusion: np.ndarray = field(default_factory=lambda: np.zeros((N_LABELS, N_LABELS), dtype=int))
    labels: tuple = tuple(lab.value for lab in LABELS)
    pooled_macro_f1: Optional[float] = None
    pooled_weighted_f1: Optional[float] = None
    significance: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    @property
    def mean_macro_f1(self) -> float:
        return float(np.mean([f["macro_f1"] for f in self.folds])) if self.folds else float("nan")

    @property
    def mean_weighted_f1(self) -> float:
        return float(np.mean([f["weighted_f1"] for f in self.folds])) if self.folds else float("nan")

    @classmethod
    def from_folds(cls, fold_results, labels=None):
        """``fold_results``: iterable of (y_true, y_pred) pairs, one per fold."""
        labels = tuple(labels) if labels is not None else tuple(lab.value for lab in LABELS)
        k = len(labels)
        folds, total = [], np.zeros((k, k), dtype=np.int64)
        for y_true, y_pred in fold_results:
            cm = confusion(y_true, y_pred, k)
            macro, weighted = f1_from_confusion(cm)
            folds.append({"macro_f1": float(macro), "weighted_f1": float(weighted), "n": int(cm.sum())})
            total += cm
        pooled = f1_from_confusion(total) if total.sum() else (np.nan, np.nan)
        return cls(folds, total, labels, float(pooled[0]), float(pooled[1]))

    def to_dict(self) -> dict:
        out = {
            "folds": self.folds,
            "mean_macro_f1": self.mean_macro_f1,
            "mean_weighted_f1": self.mean_weighted_f1,
            "pooled_macro_f1": self.pooled_macro_f1,
            "pooled_weighted_f1": self.pooled_weighted_f1,
            "confusion": np.asarray(self.confusion).astype(int).tolist(),
            "labels": list(self.labels),
        }
        if self.significance:
            out["significance"] = self.significance
        if self.meta:
            out["meta"] = self.meta
        return out

    def to_json(self, path=None) -> str:
        text = json.dumps(self.to_dict(), indent=2, sort_keys=True)
        if path is not None:
            Path(path).write_text(text + "\n", encoding="utf-8")
        return text

    def confusion_csv(self, path) -> None:
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["true\\pred", *self.labels])
            for name, row in zip(self.labels, np.asarray(self.confusion)):
                w.writerow([name, *map(int, row)])


def plot_confusion(cm, labels, path, title=None) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    cm = np.asarray(cm)
    short = ["".join(c for c in name if c.isupper()) or name for name in labels]
    fig, ax = plt.subplots(figsize=(6, 5))
    im = ax.imshow(cm, cmap="Blues")
    ax.set_xticks(range(len(labels)), short)
    ax.set_yticks(range(len(labels)), short)
    ax.set_xlabel("Predicted")
    ax.set_ylabel("True")
    for i in range(cm.shape[0]):
        for j in range(cm.shape[1]):
            ax.text(j, i, int(cm[i, j]), ha="center", va="center",
                    color="white" if cm[i, j] > cm.max() / 2 else "black", fontsize=7)
    if title:
        ax.set_title(title)
    fig.colorbar(im, ax=ax)
    fig.tight_layout()
    fig.savefig(path, dpi=120, metadata={"Software": None})
    plt.close(fig)
