"""Command-line entry point: ``resper <command> [input] [options]``.

Options come from (highest precedence first) command-line flags, a plain
``key = value`` config file given with ``--config``, and built-in defaults.
Every run writes ``config.resolved`` next to its outputs; timestamps go only
to ``run.log``.
"""

import argparse
import configparser
import datetime as _dt
import json
import logging
import os
import shutil
import sys
import tempfile
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Optional

from .errors import ConfigError, PreconditionError, ResperError

logger = logging.getLogger("resper")

COMMANDS = ("ingest", "stats", "kappa", "train", "eval", "predict", "outcome", "analyze")


@dataclass
class RunConfig:
    input: Optional[str] = None
    domain: Optional[str] = None
    model: str = "resper"
    embedder: Optional[str] = None
    folds: int = 5
    seed: int = 0
    out: str = "out"
    subset: Optional[str] = None
    features: str = "counts"
    checkpoint: Optional[str] = None
    checkpoints: Optional[str] = None
    compare: Optional[str] = None
    learning_rate: float = 1e-4
    max_epochs: int = 99
    lr_decay: float = 0.5
    decay_every: int = 20
    patience: int = 5
    d_h1: int = 1024
    d_h2: int = 300
    d_emb: Optional[int] = None
    dropout: float = 0.0
    contextual_model: str = "bert-base-uncased"
    cache_dir: Optional[str] = None
    n_resamples: int = 10000
    outcome_epochs: int = 30
    outcome_lr: float = 1e-3
    use_predicted: bool = False
    joint: bool = False

    def resolved_text(self) -> str:
        return "".join(f"{k} = {'' if v is None else v}\n" for k, v in sorted(asdict(self).items()))


_FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _coerce(key, value):
    kind = _FIELD_TYPES[key]
    if value is None or value == "":
        return None
    if "bool" in str(kind):
        if isinstance(value, bool):
            return value
        return str(value).strip().lower() in ("1", "true", "yes", "on")
    if "int" in str(kind):
        return int(value)
    if "float" in str(kind):
        return float(value)
    return str(value)


def read_config_file(path) -> dict:
    parser = configparser.ConfigParser(interpolation=None)
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    parser.read_string("[run]\n" + text)
    out = {}
    for key, value in parser["run"].items():
        key = key.replace("-", "_")
        if key not in _FIELD_TYPES:
            raise ConfigError(f"unknown config key {key!r} in {path}")
        try:
            out[key] = _coerce(key, value)
        except ValueError:
            raise ConfigError(f"bad value for {key!r}: {value!r}") from None
    return out


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="resper", description="Resisting-strategy toolkit")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("input", nargs="?", help="corpus JSONL (or agreement CSV for kappa)")
    p.add_argument("--config", help="key = value config file")
    p.add_argument("--domain", choices=["p4g", "cb"])
    p.add_argument("--model", choices=["resper", "cnn", "bert-cnn", "bigru", "bigru-sf", "higru-sf"])
    p.add_argument("--folds", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.add_argument("--embedder", choices=["contextual", "lookup"])
    p.add_argument("--subset", choices=["ee", "er", "bu", "se", "both"])
    p.add_argument("--features", choices=["counts", "proportions"])
    p.add_argument("--checkpoint", help="model checkpoint for predict")
    p.add_argument("--checkpoints", help="directory written by `train`, reused by `eval`")
    p.add_argument("--compare", help="second model kind for a paired bootstrap in `eval`")
    p.add_argument("--learning-rate", dest="learning_rate", type=float)
    p.add_argument("--max-epochs", dest="max_epochs", type=int)
    p.add_argument("--d-h1", dest="d_h1", type=int)
    p.add_argument("--d-h2", dest="d_h2", type=int)
    p.add_argument("--d-emb", dest="d_emb", type=int)
    p.add_argument("--cache-dir", dest="cache_dir")
    p.add_argument("--use-predicted", dest="use_predicted", action="store_true", default=None)
    p.add_argument("--joint", action="store_true", default=None)
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def resolve_config(args) -> RunConfig:
    values = {}
    if args.config:
        values.update(read_config_file(args.config))
    for key in _FIELD_TYPES:
        v = getattr(args, key, None)
        if v is not None:
            values[key] = v
    return RunConfig(**values)


class _OutputDir:
    """Stage outputs in a temp dir and publish them only on success."""

    def __init__(self, out):
        self.out = Path(out)
        self.lock = self.out / ".lock"

    def __enter__(self):
        self.out.mkdir(parents=True, exist_ok=True)
        try:
            fd = os.open(self.lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
            os.close(fd)
        except FileExistsError:
            raise PreconditionError(f"output directory {self.out} is locked by another run") from None
        self.stage = Path(tempfile.mkdtemp(prefix=".staging-", dir=self.out))
        return self.stage

    def __exit__(self, exc_type, exc, tb):
        try:
            if exc_type is None:
                for item in sorted(self.stage.iterdir()):
                    target = self.out / item.name
                    if target.is_dir():
                        shutil.rmtree(target)
                    os.replace(item, target)
        finally:
            shutil.rmtree(self.stage, ignore_errors=True)
            self.lock.unlink(missing_ok=True)
        return False


# ------------------------------------------------------------ commands


def _need_input(cfg):
    if not cfg.input:
        raise ConfigError("an input file is required")
    return cfg.input


def _corpus(cfg):
    from .corpus import load_corpus

    domain = cfg.domain.upper() if cfg.domain else None
    convs = load_corpus(_need_input(cfg), domain)
    if convs and cfg.domain is None:
        cfg.domain = convs[0].domain.value.lower()
    return convs


def _dump(obj, path):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def cmd_ingest(cfg, stage):
    from .corpus import dump_corpus

    convs = _corpus(cfg)
    dump_corpus(convs, stage / "corpus.jsonl")
    print(f"{len(convs)} conversations validated")


def cmd_stats(cfg, stage):
    from .corpus import ROLES_OF, Domain, label_distribution, corpus_stats

    convs = _corpus(cfg)
    stats = corpus_stats(convs)
    dist = {}
    for role in ROLES_OF[Domain(cfg.domain.upper())]:
        if role.labeled:
            dist[role.value] = {k.value: v for k, v in label_distribution(convs, role, cfg.seed).items()}
    stats["label_distribution"] = dist
    _dump(stats, stage / "stats.json")
    print(json.dumps(stats, indent=2, sort_keys=True))


def cmd_kappa(cfg, stage):
    from .agreement import AgreementMatrix, fleiss_kappa

    m = AgreementMatrix.from_csv(_need_input(cfg))
    result = {"kappa": fleiss_kappa(m), "items": int(m.counts.shape[0]), "annotators": m.n_annotators,
              "categories": list(m.categories)}
    _dump(result, stage / "kappa.json")
    print(f"fleiss kappa = {result['kappa']:.4f}")


def _tagger(cfg, kind=None):
    from .baselines import CLI_MODELS
    from .tagger import StrategyTagger

    arch, default_emb = CLI_MODELS[kind or cfg.model]
    embedder = cfg.embedder or default_emb
    if arch == "contextual-cnn" and embedder == "lookup":
        arch = "cnn"
    return StrategyTagger(
        model=arch, embedder=embedder, d_emb=cfg.d_emb, d_h1=cfg.d_h1, d_h2=cfg.d_h2,
        learning_rate=cfg.learning_rate, max_epochs=cfg.max_epochs, lr_decay=cfg.lr_decay,
        decay_every=cfg.decay_every, patience=cfg.patience, dropout=cfg.dropout, seed=cfg.seed,
        label_seed=cfg.seed, contextual_model=cfg.contextual_model, cache_dir=cfg.cache_dir,
    )


def _train_folds(cfg, convs, stage=None, kind=None):
    """Train one model per fold; returns [(fold_ids, estimator)]."""
    from sklearn.base import clone

    from .training import assert_no_leak, make_folds

    base = _tagger(cfg, kind)
    folds = make_folds(convs, cfg.folds, cfg.seed)
    by_id = {c.id: c for c in convs}
    out = []
    for f, test_ids in enumerate(folds):
        train_ids = [i for g, fold in enumerate(folds) if g != f for i in fold]
        assert_no_leak(train_ids, test_ids)
        est = clone(base).set_params(seed=cfg.seed + f).fit([by_id[i] for i in train_ids])
        if stage is not None:
            d = stage / f"fold{f}"
            d.mkdir()
            est.save(d / "checkpoint.pt")
            _dump(est.history_, d / "loss_log.json")
        out.append((test_ids, est))
        logger.info("fold %d trained", f)
    if stage is not None:
        _dump({"k": cfg.folds, "seed": cfg.seed, "folds": folds}, stage / "folds.json")
    return out


def cmd_train(cfg, stage):
    convs = _corpus(cfg)
    _train_folds(cfg, convs, stage)
    print(f"trained {cfg.folds} folds -> {cfg.out}")


def _load_folds(cfg, convs):
    from .tagger import StrategyTagger
    from .training import assert_no_leak

    root = Path(cfg.checkpoints)
    meta = json.loads((root / "folds.json").read_text())
    all_ids = {c.id for c in convs}
    out = []
    for f, test_ids in enumerate(meta["folds"]):
        train_ids = all_ids - set(test_ids)
        assert_no_leak(train_ids, test_ids)
        out.append((test_ids, StrategyTagger.load(root / f"fold{f}" / "checkpoint.pt")))
    return out


def _evaluate(trained, convs):
    by_id = {c.id: c for c in convs}
    fold_results, pooled_true, pooled_pred = [], [], []
    for test_ids, est in trained:
        test = [by_id[i] for i in test_ids]
        y_true = [l for c in test for l in est.gold(c)]
        y_pred = [l for p in est.predict(test) for l in p]
        fold_results.append((y_true, y_pred))
        pooled_true += y_true
        pooled_pred += y_pred
    return fold_results, pooled_true, pooled_pred


def cmd_eval(cfg, stage):
    from .metrics import MetricsReport, paired_bootstrap, plot_confusion

    convs = _corpus(cfg)
    trained = _load_folds(cfg, convs) if cfg.checkpoints else _train_folds(cfg, convs)
    fold_results, y_true, y_pred = _evaluate(trained, convs)
    report = MetricsReport.from_folds(fold_results)
    report.meta = {"model": cfg.model, "domain": cfg.domain}
    if cfg.compare:
        other = _train_folds(cfg, convs, kind=cfg.compare)
        _, y_true_b, y_pred_b = _evaluate(other, convs)
        if y_true_b != y_true:
            raise PreconditionError("comparison model evaluated a different population")
        report.significance = {"baseline": cfg.compare}
        for metric in ("macro", "weighted"):
            report.significance[f"{metric}_p_value"] = paired_bootstrap(
                y_true, y_pred_b, y_pred, cfg.n_resamples, metric, cfg.seed
            )
    report.to_json(stage / "metrics.json")
    report.confusion_csv(stage / "confusion.csv")
    plot_confusion(report.confusion, report.labels, stage / "confusion.png",
                   title=f"{cfg.model} ({cfg.domain})")
    print(f"mean macro-F1 {report.mean_macro_f1:.4f}  mean weighted-F1 {report.mean_weighted_f1:.4f}")


def cmd_predict(cfg, stage):
    from .corpus import LABELS
    from .tagger import StrategyTagger

    if not cfg.checkpoint:
        raise ConfigError("predict needs --checkpoint")
    convs = _corpus(cfg)
    est = StrategyTagger.load(cfg.checkpoint, cache_dir=cfg.cache_dir)
    with (stage / "predictions.jsonl").open("w", encoding="utf-8") as fh:
        for conv, probs in zip(convs, est.predict_proba(convs)):
            for u, p in zip(conv.labeled_utterances(), probs):
                label = LABELS[int(p.argmax())]
                fh.write(json.dumps({
                    "id": conv.id, "turn": u.turn, "speaker": u.speaker.value, "text": u.text,
                    "label": label.value, "probs": {l.value: float(x) for l, x in zip(LABELS, p)},
                }, sort_keys=True) + "\n")
    print(f"labeled {len(convs)} conversations")


def cmd_outcome(cfg, stage):
    from .corpus import Domain
    from .outcome import SUBSETS, OutcomePredictor, outcome_experiment, outcome_report_json, outcome_row

    convs = _corpus(cfg)
    domain = Domain(cfg.domain.upper())
    names = list(SUBSETS[domain])
    if cfg.subset:
        want = cfg.subset.upper() if cfg.subset != "both" else "both"
        if want not in SUBSETS[domain]:
            raise ConfigError(f"subset {cfg.subset} not valid for {domain.value}")
        names = [want]
    predicted = None
    if cfg.use_predicted:
        if not cfg.checkpoint:
            raise ConfigError("--use-predicted needs --checkpoint")
        from .tagger import StrategyTagger

        est = StrategyTagger.load(cfg.checkpoint, cache_dir=cfg.cache_dir)
        predicted = {c.id: p for c, p in zip(convs, est.predict(convs))}
    base = OutcomePredictor(learning_rate=cfg.outcome_lr, max_epochs=cfg.outcome_epochs, seed=cfg.seed)
    rows = []
    for name in names:
        report = outcome_experiment(convs, name, cfg.folds, cfg.seed, base, predicted, cfg.seed)
        rows.append(outcome_row(name, report))
    outcome_report_json(rows, stage / "outcome.json")
    for r in rows:
        print(f"{r['subset']:>5}  macro-F1 {r['macro_f1']:.3f}  weighted-F1 {r['weighted_f1']:.3f}")


def cmd_analyze(cfg, stage):
    from .analysis import coefficient_report, report_csv, report_text

    convs = _corpus(cfg)
    rows = coefficient_report(convs, cfg.domain.upper(), cfg.features == "proportions", cfg.joint, cfg.seed)
    (stage / "coefficients.csv").write_text(report_csv(rows), encoding="utf-8")
    text = report_text(rows)
    (stage / "coefficients.txt").write_text(text, encoding="utf-8")
    print(text, end="")


HANDLERS = {
    "ingest": cmd_ingest, "stats": cmd_stats, "kappa": cmd_kappa, "train": cmd_train,
    "eval": cmd_eval, "predict": cmd_predict, "outcome": cmd_outcome, "analyze": cmd_analyze,
}


def run(command: str, cfg: RunConfig) -> int:
    with _OutputDir(cfg.out) as stage:
        (stage / "config.resolved").write_text(f"command = {command}\n" + cfg.resolved_text(), encoding="utf-8")
        HANDLERS[command](cfg, stage)
        # the domain may have been inferred from the corpus
        (stage / "config.resolved").write_text(f"command = {command}\n" + cfg.resolved_text(), encoding="utf-8")
    with open(Path(cfg.out) / "run.log", "a", encoding="utf-8") as fh:
        fh.write(f"{_dt.datetime.now().isoformat(timespec='seconds')} {command} ok\n")
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        return run(args.command, cfg)
    except ResperError as exc:
        print(f"error: {exc.code}: {exc}", file=sys.stderr)
        return 1
    except (OSError, KeyError, ValueError) as exc:
        print(f"error: E_IO: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
