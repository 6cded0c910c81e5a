"""Optimisation loop, fold construction and the cross-validation driver."""

import copy
import logging
import math
from dataclasses import asdict, dataclass

import numpy as np
import torch

from .errors import PreconditionError, TrainingDivergedError
from .model import strategy_loss

logger = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    learning_rate: float = 1e-4
    max_epochs: int = 99
    lr_decay: float = 0.5
    decay_every: int = 20
    d_h1: int = 1024
    d_h2: int = 300
    patience: int = 5
    min_delta: float = 1e-6
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise PreconditionError("learning_rate must be positive")
        if not 0 <= self.max_epochs < 100:
            raise PreconditionError("max_epochs must be in [0, 100)")
        if not 0 < self.lr_decay <= 1:
            raise PreconditionError("lr_decay must be in (0, 1]")
        if self.decay_every <= 0 or self.d_h1 <= 0 or self.d_h2 <= 0 or self.patience <= 0:
            raise PreconditionError("decay_every, d_h1, d_h2 and patience must be positive")

    def lr_at(self, epoch: int) -> float:
        """Learning rate for 0-based ``epoch``: halves after every ``decay_every`` epochs."""
        return self.learning_rate * self.lr_decay ** (epoch // self.decay_every)

    def to_dict(self):
        return asdict(self)


def make_folds(conversations, k: int = 5, seed: int = 0) -> list:
    """Split conversation ids into ``k`` disjoint folds whose sizes differ by at most one.

    Ids are sorted before shuffling, so the split ignores input order.
    """
    if k < 2:
        raise PreconditionError("k must be >= 2")
    ids = sorted(getattr(c, "id", c) for c in conversations)
    if len(set(ids)) != len(ids):
        raise PreconditionError("conversation ids must be unique")
    if len(ids) < k:
        raise PreconditionError(f"{len(ids)} conversations cannot fill {k} folds")
    order = np.random.default_rng(seed).permutation(len(ids))
    return [[ids[i] for i in part] for part in np.array_split(order, k)]


def assert_no_leak(train_ids, test_ids) -> None:
    overlap = set(train_ids) & set(test_ids)
    if overlap:
        raise AssertionError(f"fold leakage: {sorted(overlap)[:5]}")


def train_network(net, examples, config: TrainConfig, log_every: int = 0) -> list:
    """Train ``net`` one conversation per step with Adam and step decay.

    ``examples`` is a list of ``(conversation_id, inputs, targets)`` where
    ``targets`` is a LongTensor with -1 at positions that carry no label.
    Keeps the lowest-loss epoch's weights, stopping after ``patience`` epochs
    without improvement. Returns the per-epoch log.
    """
    if not examples:
        raise PreconditionError("empty training set")
    history = []
    if config.max_epochs == 0:
        return history
    torch.manual_seed(config.seed)
    rng = np.random.default_rng(config.seed)
    params = [p for p in net.parameters() if p.requires_grad]
    optimizer = torch.optim.Adam(params, lr=config.learning_rate)
    best_loss, best_state, stale = math.inf, None, 0

    for epoch in range(config.max_epochs):
        lr = config.lr_at(epoch)
        for group in optimizer.param_groups:
            group["lr"] = lr
        net.train()
        total, correct, count, losses = 0.0, 0, 0, []
        for i in rng.permutation(len(examples)):
            conv_id, inputs, targets = examples[i]
            keep = targets >= 0
            if not keep.any():
                continue
            logits = net(inputs)[keep]
            probs = torch.softmax(logits, dim=-1)
            loss = strategy_loss(probs, targets[keep].tolist())
            if not torch.isfinite(loss):
                raise TrainingDivergedError(epoch, conv_id, loss.item())
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            losses.append(loss.item())
            correct += int((logits.argmax(dim=-1) == targets[keep]).sum())
            count += int(keep.sum())
        epoch_loss = float(np.mean(losses)) if losses else 0.0
        total = correct / max(count, 1)
        history.append({"epoch": epoch, "lr": lr, "loss": epoch_loss, "train_accuracy": total})
        if log_every and (epoch % log_every == 0):
            logger.info("epoch %d lr %.2e loss %.4f acc %.3f", epoch, lr, epoch_loss, total)
        if epoch_loss < best_loss - config.min_delta:
            best_loss, stale = epoch_loss, 0
            best_state = copy.deepcopy(net.state_dict())
        else:
            stale += 1
            if stale >= config.patience:
                logger.info("loss plateau; stopping after epoch %d", epoch)
                break
    if best_state is not None:
        net.load_state_dict(best_state)
    net.eval()
    return history


def cross_validate(estimator, conversations, k: int = 5, seed: int = 0, return_estimators=False):
    """k-fold CV for any estimator exposing fit / predict / gold.

    Each fold trains a clone seeded with ``seed + fold``. Returns
    ``(MetricsReport, predictions)`` where predictions maps conversation id to
    predicted labels; the fitted estimators are appended when requested.
    """
    from sklearn.base import clone

    from .metrics import MetricsReport

    by_id = {c.id: c for c in conversations}
    folds = make_folds(conversations, k, seed)
    fold_results, predictions, fitted = [], {}, []
    for f, test_ids in enumerate(folds):
        train_ids = [cid for g, fold in enumerate(folds) if g != f for cid in fold]
        assert_no_leak(train_ids, test_ids)
        est = clone(estimator).set_params(seed=estimator.get_params()["seed"] + f)
        est.fit([by_id[i] for i in train_ids])
        test = [by_id[i] for i in test_ids]
        preds = est.predict(test)
        y_true, y_pred = [], []
        for conv, p in zip(test, preds):
            gold = est.gold(conv)
            y_true.extend(gold)
            y_pred.extend(p)
            predictions[conv.id] = p
        fold_results.append((y_true, y_pred))
        fitted.append(est)
        logger.info("fold %d/%d done (%d test items)", f + 1, k, len(y_true))
    report = MetricsReport.from_folds(fold_results)
    if return_estimators:
        return report, predictions, fitted
    return report, predictions
