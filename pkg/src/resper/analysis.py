"""Logistic regression of conversation success on per-party strategy frequencies."""

import csv
import io
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit
from scipy.stats import norm
from sklearn.base import BaseEstimator

from .corpus import LABELS, Domain, Role, StrategyLabel, collapse_multilabel
from .errors import PreconditionError
from .outcome import success_labels

# Row order of the published coefficient table.
REPORT_ORDER = (
    StrategyLabel.NotAStrategy,
    StrategyLabel.Hesitance,
    StrategyLabel.CounterArgument,
    StrategyLabel.PersonalChoice,
    StrategyLabel.InformationInquiry,
    StrategyLabel.SourceDerogation,
    StrategyLabel.SelfPity,
    StrategyLabel.SelfAssertion,
)
PARTIES = {Domain.P4G: (Role.EE,), Domain.CB: (Role.BU, Role.SE)}


def strategy_frequencies(conversation, party, seed: int = 0, proportions: bool = False) -> np.ndarray:
    """Counts of each label (StrategyLabel order) over ``party``'s labeled utterances."""
    party = Role.parse(party) if isinstance(party, str) else party
    if party.domain is not conversation.domain:
        raise PreconditionError(f"role {party.value} invalid for {conversation.domain.value}")
    counts = np.zeros(len(LABELS))
    for u in conversation.labeled_utterances(party):
        counts[collapse_multilabel(u, seed).index] += 1
    if proportions and counts.sum():
        counts = counts / counts.sum()
    return counts


@dataclass
class RegressionResult:
    names: list
    coef: np.ndarray
    bse: np.ndarray
    pvalues: np.ndarray
    converged: bool
    n_iter: int
    dropped: list = field(default_factory=list)
    separating: list = field(default_factory=list)

    def __getitem__(self, name):
        i = self.names.index(name)
        return self.coef[i], self.bse[i], self.pvalues[i]

    def as_dict(self) -> dict:
        return {n: (float(c), float(s), float(p)) for n, c, s, p in zip(self.names, self.coef, self.bse, self.pvalues)}


def _independent_columns(X, tol=1e-10):
    """Greedy left-to-right selection of linearly independent columns."""
    keep = []
    for j in range(X.shape[1]):
        trial = keep + [j]
        if np.linalg.matrix_rank(X[:, trial], tol=tol * max(1.0, np.abs(X[:, trial]).max())) == len(trial):
            keep = trial
    return keep


def _separating_features(X, y, names):
    hits = []
    for j, name in enumerate(names):
        x0, x1 = X[y == 0, j], X[y == 1, j]
        if x0.max() <= x1.min() or x1.max() <= x0.min():
            hits.append(name)
    return hits


def logistic_fit(features, outcomes, names=None, tol: float = 1e-8, max_iter: int = 100) -> RegressionResult:
    """Maximum-likelihood logistic regression with intercept, solved by IRLS.

    Constant and linearly dependent feature columns are dropped (and listed in
    ``dropped``). Standard errors come from the inverse Fisher information;
    p-values are two-sided Wald tests. Perfect or quasi-complete separation is
    reported through ``converged=False`` and ``separating``.
    """
    X = np.asarray(features, dtype=float)
    y = np.asarray(outcomes, dtype=float)
    if X.ndim != 2 or X.shape[0] != y.shape[0]:
        raise PreconditionError("features must be (n_rows, n_features) aligned with outcomes")
    if not np.all(np.isin(y, (0.0, 1.0))):
        raise PreconditionError("outcomes must be binary")
    if len(np.unique(y)) < 2:
        raise PreconditionError("outcomes contain a single class")
    names = list(names) if names is not None else [f"x{j}" for j in range(X.shape[1])]

    dropped = [names[j] for j in range(X.shape[1]) if np.ptp(X[:, j]) == 0]
    cols = [j for j in range(X.shape[1]) if np.ptp(X[:, j]) > 0]
    design = np.column_stack([np.ones(len(y)), X[:, cols]])
    keep = _independent_columns(design)
    if keep[0] != 0:
        keep = [0] + keep
    dropped += [names[cols[j - 1]] for j in range(1, design.shape[1]) if j not in keep]
    design = design[:, keep]
    kept_names = ["const"] + [names[cols[j - 1]] for j in keep[1:]]

    beta = np.zeros(design.shape[1])
    converged, dev_old = False, np.inf
    n_iter = 0
    for n_iter in range(1, max_iter + 1):
        eta = design @ beta
        mu = expit(eta)
        w = np.clip(mu * (1 - mu), 1e-12, None)
        z = eta + (y - mu) / w
        wx = design * w[:, None]
        beta = np.linalg.solve(design.T @ wx, wx.T @ z)
        mu = np.clip(expit(design @ beta), 1e-300, 1 - 1e-16)
        dev = -2 * np.sum(y * np.log(mu) + (1 - y) * np.log1p(-mu))
        if abs(dev - dev_old) <= tol * (abs(dev) + 0.1):
            converged = True
            break
        dev_old = dev

    separating = _separating_features(X[:, cols], y, [names[c] for c in cols])
    mu = expit(design @ beta)
    fitted_extreme = np.all((mu < 1e-6) | (mu > 1 - 1e-6))
    if separating or fitted_extreme or not np.all(np.isfinite(beta)):
        converged = False
        if not separating:
            separating = [kept_names[int(np.argmax(np.abs(beta[1:]))) + 1]] if len(beta) > 1 else []

    w = mu * (1 - mu)
    fisher = design.T @ (design * w[:, None])
    try:
        cov = np.linalg.inv(fisher)
        bse = np.sqrt(np.clip(np.diag(cov), 0, None))
    except np.linalg.LinAlgError:
        bse = np.full(len(beta), np.inf)
    with np.errstate(divide="ignore", invalid="ignore"):
        zstat = np.where(bse > 0, beta / bse, 0.0)
    pvalues = np.clip(2 * norm.sf(np.abs(zstat)), 0.0, 1.0)
    pvalues = np.where(np.isfinite(pvalues), pvalues, 1.0)
    return RegressionResult(kept_names, beta, bse, pvalues, converged, n_iter, dropped, separating)


class StrategyLogit(BaseEstimator):
    """Estimator face of :func:`logistic_fit` (``coef_``, ``bse_``, ``pvalues_``)."""

    def __init__(self, tol=1e-8, max_iter=100, feature_names=None):
        self.tol = tol
        self.max_iter = max_iter
        self.feature_names = feature_names

    def fit(self, X, y):
        self.result_ = logistic_fit(X, y, self.feature_names, self.tol, self.max_iter)
        self.names_ = self.result_.names
        self.intercept_ = self.result_.coef[0]
        self.coef_ = self.result_.coef[1:]
        self.bse_ = self.result_.bse
        self.pvalues_ = self.result_.pvalues
        self.converged_ = self.result_.converged
        self.dropped_ = self.result_.dropped
        return self

    def predict_proba(self, X):
        X = np.asarray(X, dtype=float)
        idx = [self.feature_names.index(n) if self.feature_names else int(n[1:]) for n in self.names_[1:]]
        p = expit(self.intercept_ + X[:, idx] @ self.coef_)
        return np.column_stack([1 - p, p])

    def predict(self, X):
        return (self.predict_proba(X)[:, 1] > 0.5).astype(int)


def stars(p: float) -> str:
    return "**" if p <= 0.01 else "*" if p <= 0.05 else ""


def coefficient_report(conversations, domain=None, proportions=False, joint=False, seed=0) -> list:
    """Rows ``{"strategy", "party", "coef", "se", "p", "stars"}`` in the table's layout.

    One regression per party (BU and SE separately for CB) against the shared
    success vector; ``joint=True`` fits both CB parties' features in one model.
    """
    if not conversations:
        raise PreconditionError("no conversations")
    domain = Domain(domain) if domain is not None else conversations[0].domain
    outcome = success_labels(conversations)
    y = np.array([int(outcome[c.id]) for c in conversations])
    parties = PARTIES[domain]
    blocks = {
        p: np.array([strategy_frequencies(c, p, seed, proportions) for c in conversations]) for p in parties
    }
    fits = {}
    if joint and len(parties) > 1:
        names = [f"{p.value}:{lab.value}" for p in parties for lab in LABELS]
        res = logistic_fit(np.hstack([blocks[p] for p in parties]), y, names)
        for p in parties:
            fits[p] = (res, f"{p.value}:")
    else:
        for p in parties:
            fits[p] = (logistic_fit(blocks[p], y, [lab.value for lab in LABELS]), "")
    rows = []
    for lab in REPORT_ORDER:
        for p in parties:
            res, prefix = fits[p]
            name = prefix + lab.value
            if name in res.names:
                coef, se, pv = res[name]
                rows.append({"strategy": lab.value, "party": p.value, "coef": float(coef),
                             "se": float(se), "p": float(pv), "stars": stars(pv),
                             "converged": res.converged})
            else:
                rows.append({"strategy": lab.value, "party": p.value, "coef": None, "se": None,
                             "p": None, "stars": "", "converged": res.converged})
    return rows


def report_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=["strategy", "party", "coef", "se", "p", "stars", "converged"],
                       lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: ("" if r[k] is None else r[k]) for k in w.fieldnames})
    return buf.getvalue()


def report_text(rows) -> str:
    parties = list(dict.fromkeys(r["party"] for r in rows))
    cell = {(r["strategy"], r["party"]): r for r in rows}
    lines = [f"{'Strategy':<20}" + "".join(f"{p:>12}" for p in parties)]
    lines.append("-" * len(lines[0]))
    for lab in REPORT_ORDER:
        out = f"{lab.value:<20}"
        for p in parties:
            r = cell[(lab.value, p)]
            out += f"{'dropped':>12}" if r["coef"] is None else f"{r['coef']:>10.3f}{r['stars']:<2}"
        lines.append(out)
    lines.append("* p <= 0.05, ** p <= 0.01")
    return "\n".join(lines) + "\n"
