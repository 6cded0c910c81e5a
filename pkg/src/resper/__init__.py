"""Resisting-strategy tagging and outcome analysis for persuasion and negotiation dialogues."""

from .agreement import AgreementMatrix, fleiss_kappa
from .analysis import StrategyLogit, coefficient_report, logistic_fit, strategy_frequencies
from .corpus import (
    LABELS,
    Conversation,
    Domain,
    Role,
    StrategyLabel,
    Utterance,
    collapse_multilabel,
    corpus_stats,
    label_distribution,
    load_corpus,
)
from .embeddings import EmbedderSpec, embed_tokens, vocab_of
from .metrics import MetricsReport, confusion, f1_scores, paired_bootstrap
from .model import ResPerNet, encode_conversation, encode_utterance, strategy_loss
from .outcome import OutcomePredictor, cb_ratio, cb_success, outcome_experiment, p4g_success
from .tagger import StrategyTagger
from .training import TrainConfig, cross_validate, make_folds

__version__ = "0.1.0"
