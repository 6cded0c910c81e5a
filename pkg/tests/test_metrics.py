import json
import time

import numpy as np
import pytest

from oracles import confusion_oracle, f1_oracle
from resper.corpus import LABELS, StrategyLabel as S
from resper.errors import PreconditionError
from resper.metrics import MetricsReport, confusion, f1_scores, paired_bootstrap, plot_confusion


def metric_oracle_max_error(n_vectors=1000, seed=0):
    gen = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_vectors):
        n = int(gen.integers(1, 201))
        t = gen.integers(0, 8, size=n).tolist()
        p = gen.integers(0, 8, size=n).tolist()
        worst = max(worst, *np.abs(np.subtract(f1_scores(t, p), f1_oracle(t, p))))
        worst = max(worst, float(np.abs(confusion(t, p) - confusion_oracle(t, p)).max()))
    return worst


def test_oracle_equivalence():
    start = time.time()
    assert metric_oracle_max_error() <= 1e-12
    assert time.time() - start < 60


def test_perfect_predictions():
    y = [l for l in LABELS for _ in range(3)]
    assert f1_scores(y, y) == (1.0, 1.0)
    assert np.array_equal(confusion(y, y), np.diag([3] * 8))


def test_two_class_fixture():
    A, B = S.Hesitance, S.SelfPity
    macro, weighted = f1_scores([A, A, B], [A, B, B])
    assert macro == pytest.approx(2 / 3, abs=1e-15)
    assert weighted == pytest.approx(2 / 3, abs=1e-15)
    assert (macro, weighted) == pytest.approx(f1_oracle([5, 5, 4], [5, 4, 4]), abs=1e-15)


def test_constant_prediction():
    y_true = [c for c in range(8) for _ in range(4)]
    y_pred = [2] * len(y_true)
    macro, weighted = f1_scores(y_true, y_pred)
    # class 2: precision 1/8, recall 1 -> F1 = 2/9; every other class scores 0
    assert macro == pytest.approx((2 / 9) / 8, abs=1e-15)
    assert weighted == pytest.approx((2 / 9) / 8, abs=1e-15)
    assert (macro, weighted) == pytest.approx(f1_oracle(y_true, y_pred), abs=1e-15)


def test_single_off_diagonal():
    cm = confusion([S.Hesitance], [S.InformationInquiry])
    assert cm.sum() == 1 and cm[S.Hesitance.index, S.InformationInquiry.index] == 1


def test_length_mismatch():
    with pytest.raises(PreconditionError):
        f1_scores([0, 1], [0])
    with pytest.raises(PreconditionError):
        confusion([0], [0, 1])


def test_bootstrap_identical_systems():
    y = [0, 1, 2, 3] * 10
    assert paired_bootstrap(y, y, y, 1000) == 1.0


def test_bootstrap_perfect_vs_wrong():
    gen = np.random.default_rng(0)
    y = np.repeat(np.arange(8), 63)[:500]
    gen.shuffle(y)
    wrong = (y + 1) % 8
    assert paired_bootstrap(y, y, wrong, 10_000, seed=0) < 0.001
    assert paired_bootstrap(y, wrong, y, 10_000, seed=0) < 0.001


def test_bootstrap_close_systems_not_significant():
    gen = np.random.default_rng(1)
    y = gen.integers(0, 8, 300)
    a = np.where(gen.random(300) < 0.6, y, gen.integers(0, 8, 300))
    b = a.copy()
    b[:3] = y[:3]  # nearly identical to a
    p = paired_bootstrap(y, a, b, 2000, seed=3)
    assert 0.05 < p <= 1.0


def test_bootstrap_requires_enough_resamples():
    with pytest.raises(PreconditionError):
        paired_bootstrap([0, 1], [0, 1], [1, 0], 10)


def test_report_aggregation(tmp_path):
    folds = [([0, 0, 1], [0, 1, 1]), ([2, 2], [2, 2])]
    rep = MetricsReport.from_folds(folds)
    assert rep.mean_macro_f1 == pytest.approx((2 / 3 + 1.0) / 2)
    pooled = f1_scores([0, 0, 1, 2, 2], [0, 1, 1, 2, 2])
    assert rep.pooled_macro_f1 == pytest.approx(pooled[0])
    assert rep.confusion.sum() == 5
    text = rep.to_json(tmp_path / "m.json")
    assert json.loads((tmp_path / "m.json").read_text()) == json.loads(text)
    rep.confusion_csv(tmp_path / "c.csv")
    header = (tmp_path / "c.csv").read_text().splitlines()[0]
    assert "SourceDerogation" in header
    plot_confusion(rep.confusion, [l.value for l in LABELS], tmp_path / "c.png")
    assert (tmp_path / "c.png").stat().st_size > 0
