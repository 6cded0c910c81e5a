"""Acceptance suite: one test per criterion, each reporting a PASS/FAIL line.

Criteria 8-10 need the released annotated corpora, converted to this
package's JSONL schema, at ``$RESPER_DATA_DIR/{p4g,cb}.jsonl``. Criterion 8
falls back to criteria 1-4 plus 7 when they are absent; criteria 9 and 10
cannot be checked without them and fail with an explanation.
"""

import math
import time

import numpy as np
import pytest
import torch

from conftest import corpus_path, random_conversation, toy_net
from oracles import fleiss_oracle, newton_logit, ratio
from resper.agreement import fleiss_kappa
from resper.errors import UndefinedKappaError
from resper.model import strategy_loss
from resper.outcome import OutcomeNet, cb_ratio, cb_success, p4g_success
from test_analysis import signal_data
from test_metrics import metric_oracle_max_error
from test_model import resper_gradient_error
from test_outcome import outcome_gradient_error, p4g_conv, with_ratio
from test_training import overfit_accuracy

RESULTS = {}


def record(n, title):
    """Decorator: run the check, store a one-line verdict for the terminal summary."""

    def wrap(fn):
        def test(*args, **kwargs):
            try:
                detail = fn(*args, **kwargs)
            except BaseException as exc:
                RESULTS[n] = ("FAIL", title, str(exc).splitlines()[0] if str(exc) else type(exc).__name__)
                raise
            RESULTS[n] = ("PASS", title, detail or "")

        test.__name__ = fn.__name__
        return test

    return wrap


@record(1, "metric oracle equivalence")
def test_criterion_1_metric_oracles():
    start = time.time()
    err = metric_oracle_max_error(1000)
    elapsed = time.time() - start
    assert err <= 1e-12, f"max abs error {err:.3g}"
    assert elapsed < 60, f"took {elapsed:.1f}s"
    return f"max abs error {err:.1e}, {elapsed:.1f}s"


def causality_violations(n_convs=50):
    bad = 0
    for s in range(n_convs):
        gen = np.random.default_rng(s)
        net = toy_net(d_emb=6, d_h1=8, d_h2=8, seed=s)
        J = int(gen.integers(1, 11))
        convo = random_conversation(gen, J, 6)
        with torch.no_grad():
            base = net.predict_proba(convo)
            for j in range(J - 1):
                noisy = convo[: j + 1] + random_conversation(gen, J - j - 1, 6)
                bad += not torch.equal(net.predict_proba(noisy)[: j + 1], base[: j + 1])
    return bad


@record(2, "causality (exact)")
def test_criterion_2_causality():
    start = time.time()
    bad = causality_violations()
    elapsed = time.time() - start
    assert bad == 0, f"{bad} prefixes changed"
    assert elapsed < 60
    return f"50 conversations, 0 violations, {elapsed:.1f}s"


@record(3, "gradient check")
def test_criterion_3_gradients():
    start = time.time()
    e1, e2 = resper_gradient_error(), outcome_gradient_error()
    elapsed = time.time() - start
    assert e1 <= 1e-3 and e2 <= 1e-3, f"relative errors {e1:.2e} / {e2:.2e}"
    assert elapsed < 60
    return f"tagger {e1:.1e}, outcome {e2:.1e}"


@record(4, "loss fixed points")
def test_criterion_4_fixed_points():
    uniform = torch.full((5, 8), 0.125, dtype=torch.float64)
    nll = strategy_loss(uniform, [0, 1, 2, 3, 7]).item()
    assert abs(nll - math.log(8)) <= 1e-9
    torch.manual_seed(0)
    net = OutcomeNet(4, 8, 8).double()
    with torch.no_grad():
        net.projection.weight.zero_()
        net.projection.bias.zero_()
        p = torch.softmax(net([torch.tensor([0, 2, 3])]), -1)[0, 1].item()
    assert abs(p - 0.5) <= 1e-9
    return f"NLL - ln 8 = {nll - math.log(8):.1e}, p - 0.5 = {p - 0.5:.1e}"


@record(5, "sale-to-list ratio and success labels")
def test_criterion_5_success_labels():
    from fractions import Fraction

    for args in [(100, 50, 75), (100, 50, 100), (100, 50, 40)]:
        assert cb_ratio(*map(Fraction, args)) == ratio(*args)
    assert cb_ratio(100, 50, 75) == 0.5
    assert cb_success([with_ratio("a", 0.4), with_ratio("b", 0.4)]) == {"a": False, "b": False}
    assert cb_success([with_ratio("a", 0.2), with_ratio("b", 0.5), with_ratio("c", 0.8)]) == {
        "a": False, "b": False, "c": True}
    assert p4g_success(p4g_conv("z", 0)) is True and p4g_success(p4g_conv("h", 0.5)) is False


@record(6, "Fleiss kappa")
def test_criterion_6_kappa():
    perfect = [[3, 0] if i % 2 else [0, 3] for i in range(10)]
    assert fleiss_kappa(perfect) == 1.0
    rows = [[2, 0], [0, 2], [1, 1], [1, 1]]
    got, want = fleiss_kappa(rows), fleiss_oracle(rows)
    assert abs(got - want) <= 1e-9
    with pytest.raises(UndefinedKappaError):
        fleiss_kappa([[2, 0]] * 4)
    return f"fixture kappa {got:.6f} (oracle {want:.6f})"


@record(7, "overfit sanity")
def test_criterion_7_overfit():
    start = time.time()
    acc = overfit_accuracy(max_epochs=99)
    elapsed = time.time() - start
    assert acc >= 0.95, f"training accuracy {acc:.3f}"
    assert elapsed < 600
    return f"training accuracy {acc:.3f} in {elapsed:.0f}s"


REFERENCE_TAGGER_F1 = {"CB": 0.662, "P4G": 0.558}


def tagger_cv(domain, model):
    from resper.corpus import load_corpus
    from resper.tagger import StrategyTagger
    from resper.training import cross_validate

    convs = load_corpus(corpus_path(domain), domain)
    est = StrategyTagger(model=model, embedder="contextual", cache_dir=str(corpus_path(domain).parent / "cache"))
    report, _ = cross_validate(est, convs, k=5, seed=0)
    return report.mean_macro_f1


@record(8, "corpus-scale tagger F1")
def test_criterion_8_corpus_scale():
    if corpus_path("CB") is None or corpus_path("P4G") is None:
        # substitution: criteria 1-4 and 7 stand in for this one
        missing = [n for n in (1, 2, 3, 4, 7) if RESULTS.get(n, ("FAIL",))[0] != "PASS"]
        if missing:
            test_criterion_1_metric_oracles()
            test_criterion_2_causality()
            test_criterion_3_gradients()
            test_criterion_4_fixed_points()
            test_criterion_7_overfit()
        return "annotated corpora absent; substituted by criteria 1-4 and 7 (all pass)"
    f1 = {d: tagger_cv(d, "resper") for d in ("CB", "P4G")}
    for d, ref in REFERENCE_TAGGER_F1.items():
        assert abs(f1[d] - ref) <= 0.05, f"{d} macro-F1 {f1[d]:.3f} vs {ref}"
    sf = tagger_cv("CB", "bigru-sf")
    assert f1["CB"] >= sf, f"CB ResPer {f1['CB']:.3f} < BiGRU-sf {sf:.3f}"
    return f"CB {f1['CB']:.3f}, P4G {f1['P4G']:.3f}, CB BiGRU-sf {sf:.3f}"


REFERENCE_OUTCOME_F1 = {
    "P4G": {"ER": 0.588, "EE": 0.618, "both": 0.646},
    "CB": {"BU": 0.618, "SE": 0.462, "both": 0.605},
}

MISSING = ("annotated corpora not found at $RESPER_DATA_DIR/{p4g,cb}.jsonl; "
           "this criterion has no synthetic substitute")


@record(9, "outcome prediction on gold labels")
def test_criterion_9_outcome():
    from resper.corpus import load_corpus
    from resper.outcome import outcome_experiment

    if corpus_path("CB") is None or corpus_path("P4G") is None:
        pytest.fail(MISSING)
    start = time.time()
    got = {}
    for domain, refs in REFERENCE_OUTCOME_F1.items():
        convs = load_corpus(corpus_path(domain), domain)
        for subset, ref in refs.items():
            f1 = outcome_experiment(convs, subset, k=5, seed=0).mean_macro_f1
            got[(domain, subset)] = f1
            assert abs(f1 - ref) <= 0.08, f"{domain}/{subset} macro-F1 {f1:.3f} vs {ref}"
    assert got[("P4G", "EE")] > got[("P4G", "ER")], "EE does not beat ER"
    assert got[("CB", "BU")] > got[("CB", "SE")], "BU does not beat SE"
    assert time.time() - start < 1800
    return ", ".join(f"{d}/{s} {v:.3f}" for (d, s), v in got.items())


@record(10, "regression signs and solver oracle")
def test_criterion_10_regression():
    from resper.analysis import coefficient_report, logistic_fit
    from resper.corpus import load_corpus

    X, y = signal_data()
    res = logistic_fit(X, y)
    b, _ = newton_logit(X, y)
    err = float(np.max(np.abs(res.coef - b)))
    assert err <= 1e-6, f"solver vs Newton oracle {err:.2e}"
    if corpus_path("CB") is None or corpus_path("P4G") is None:
        pytest.fail(f"solver matches oracle ({err:.1e}); sign checks not run: " + MISSING)
    rows = {(r["party"], r["strategy"]): r for r in coefficient_report(load_corpus(corpus_path("P4G"), "P4G"))}
    rows.update({(r["party"], r["strategy"]): r for r in coefficient_report(load_corpus(corpus_path("CB"), "CB"))})
    ee, bu = rows[("EE", "SelfAssertion")], rows[("BU", "SelfAssertion")]
    assert ee["coef"] > 0 and ee["p"] <= 0.05, f"EE SelfAssertion {ee['coef']:.3f} (p={ee['p']:.3f})"
    assert bu["coef"] < 0 and bu["p"] <= 0.05, f"BU SelfAssertion {bu['coef']:.3f} (p={bu['p']:.3f})"
    return f"EE {ee['coef']:.3f}{ee['stars']}, BU {bu['coef']:.3f}{bu['stars']}, oracle {err:.1e}"
