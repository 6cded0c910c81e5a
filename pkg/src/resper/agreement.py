"""Inter-annotator agreement (Fleiss' kappa)."""

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ParseError, PreconditionError, UndefinedKappaError


@dataclass(frozen=True)
class AgreementMatrix:
    """Items x categories table of annotator counts."""

    counts: np.ndarray
    categories: tuple = ()
    items: tuple = ()

    def __post_init__(self):
        counts = np.asarray(self.counts)
        if counts.ndim != 2:
            raise PreconditionError("agreement matrix must be 2-D (items x categories)")
        if counts.size and (np.any(counts < 0) or not np.all(np.equal(np.mod(counts, 1), 0))):
            raise PreconditionError("agreement counts must be non-negative integers")
        object.__setattr__(self, "counts", counts.astype(np.int64))

    @property
    def n_annotators(self) -> int:
        sums = self.counts.sum(axis=1)
        if len(sums) and np.any(sums != sums[0]):
            bad = int(np.flatnonzero(sums != sums[0])[0])
            raise PreconditionError(
                f"row {bad} sums to {sums[bad]} but row 0 sums to {sums[0]}; "
                "every item needs the same number of annotators"
            )
        return int(sums[0]) if len(sums) else 0

    @classmethod
    def from_csv(cls, path) -> "AgreementMatrix":
        """Header ``item_id,<category>...``; one row of counts per item."""
        with Path(path).open(newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
        if not rows:
            raise ParseError("agreement CSV is empty")
        header, body = rows[0], [r for r in rows[1:] if r]
        items, counts = [], []
        for lineno, row in enumerate(body, start=2):
            if len(row) != len(header):
                raise ParseError(f"expected {len(header)} columns, got {len(row)}", line=lineno)
            try:
                counts.append([int(v) for v in row[1:]])
            except ValueError:
                raise ParseError("counts must be integers", line=lineno) from None
            items.append(row[0])
        return cls(np.array(counts).reshape(len(counts), len(header) - 1), tuple(header[1:]), tuple(items))


def fleiss_kappa(matrix) -> float:
    """Fleiss (1971) kappa for a fixed number of raters per item."""
    if not isinstance(matrix, AgreementMatrix):
        matrix = AgreementMatrix(np.asarray(matrix))
    counts = matrix.counts.astype(float)
    n_items = counts.shape[0]
    if n_items < 2:
        raise PreconditionError("need at least 2 items")
    n = matrix.n_annotators
    if n < 2:
        raise PreconditionError("need at least 2 annotators")

    p_cat = counts.sum(axis=0) / (n_items * n)
    p_item = (np.sum(counts * counts, axis=1) - n) / (n * (n - 1))
    p_bar = p_item.mean()
    p_e = float(np.sum(p_cat * p_cat))
    if np.isclose(p_e, 1.0, rtol=0, atol=1e-15):
        raise UndefinedKappaError("expected agreement is 1 (all ratings in one category); kappa undefined")
    return float((p_bar - p_e) / (1.0 - p_e))
