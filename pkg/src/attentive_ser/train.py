"""Stratified k-fold training and evaluation with unweighted accuracy."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import model as M
from .labels import EMOTION_ORDER
from .nn import AdamState, adam_step

log = logging.getLogger(__name__)

N_CLASSES = len(EMOTION_ORDER)


@dataclass
class Dataset:
    ids: list
    speakers: list
    features: np.ndarray  # [N, n_mels, frames]
    labels: np.ndarray  # int class indices
    durations: np.ndarray | None = None

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.intp)
        n = len(self.ids)
        if len(set(self.ids)) != n:
            raise ValueError("utterance ids must be unique")
        if len(self.speakers) != n or len(self.features) != n or len(self.labels) != n:
            raise ValueError("ids, speakers, features and labels must have equal length")
        if n and (self.labels.min() < 0 or self.labels.max() >= N_CLASSES):
            raise ValueError("labels must be class indices 0..3")
        if self.durations is None:
            self.durations = np.ones(n)

    def __len__(self):
        return len(self.ids)

    def index_of(self, ids) -> np.ndarray:
        pos = {u: i for i, u in enumerate(self.ids)}
        return np.array([pos[u] for u in ids], dtype=np.intp)


@dataclass
class FoldPlan:
    folds: list  # k lists of utterance ids
    seed: int

    @property
    def k(self) -> int:
        return len(self.folds)

    def train_ids(self, fold: int) -> list:
        return [u for j, f in enumerate(self.folds) if j != fold for u in f]


def kfold_split(labels, ids, k: int = 5, seed: int = 0, groups=None) -> FoldPlan:
    """Stratified k-fold partition of ``ids``.

    Each class is shuffled and dealt round-robin, continuing the fold pointer
    across classes, so fold sizes differ by at most one overall and per class.
    With ``groups`` (e.g. speakers) every group lands in a single fold instead;
    groups are placed largest first onto the currently smallest fold, which
    balances sizes but not classes.
    """
    labels = np.asarray(labels)
    ids = list(ids)
    if k < 2:
        raise ValueError("k must be at least 2")
    rng = np.random.default_rng(seed)
    folds = [[] for _ in range(k)]
    if groups is not None:
        members = {}
        for u, g in zip(ids, groups):
            members.setdefault(g, []).append(u)
        if len(members) < k:
            raise ValueError(f"speaker-disjoint split needs >= {k} speakers, got {len(members)}")
        names = sorted(members)
        order = rng.permutation(len(names))
        ranked = sorted((names[i] for i in order), key=lambda g: -len(members[g]))
        for g in ranked:
            target = min(range(k), key=lambda j: len(folds[j]))
            folds[target].extend(members[g])
        return FoldPlan(folds, seed)

    pointer = 0
    for c, emotion in enumerate(EMOTION_ORDER):
        members = [u for u, y in zip(ids, labels) if y == c]
        if len(members) < k:
            raise ValueError(
                f"class {emotion.value} has {len(members)} utterances; {k}-fold needs at least {k}"
            )
        for i in rng.permutation(len(members)):
            folds[pointer % k].append(members[i])
            pointer += 1
    return FoldPlan(folds, seed)


def confusion_matrix(y_true, y_pred, n_classes: int = N_CLASSES) -> np.ndarray:
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(cm, (np.asarray(y_true), np.asarray(y_pred)), 1)
    return cm


def unweighted_accuracy(cm) -> float:
    """Mean per-class recall; rows are ground truth."""
    cm = np.asarray(cm)
    rows = cm.sum(axis=1)
    empty = np.flatnonzero(rows == 0)
    if empty.size:
        names = [EMOTION_ORDER[i].value if cm.shape[0] == N_CLASSES else str(i) for i in empty]
        raise ValueError(f"no test utterances for class(es) {', '.join(names)}")
    return float(np.mean(np.diag(cm) / rows))


@dataclass
class TrainConfig:
    folds: int = 5
    batch_size: int = 16
    max_epochs: int = 50
    patience: int = 10
    # stop once the epoch-mean training loss falls below this; 0 disables
    target_loss: float = 0.0
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    dtype: str = "float64"
    speaker_disjoint: bool = False
    eval_batch_size: int = 16


@dataclass
class FoldReport:
    fold: int
    confusion: np.ndarray
    ua: float
    epoch_losses: list
    train_ids: list
    test_ids: list
    test_probs: np.ndarray
    params: M.ModelParams | None = field(default=None, repr=False)

    def to_dict(self) -> dict:
        return {
            "fold": self.fold,
            "ua": self.ua,
            "confusion": self.confusion.tolist(),
            "epoch_losses": [float(x) for x in self.epoch_losses],
            "n_train": len(self.train_ids),
            "n_test": len(self.test_ids),
        }


@dataclass
class CVReport:
    folds: list
    mean_ua: float
    pooled_confusion: np.ndarray

    def to_dict(self) -> dict:
        return {
            "mean_ua": self.mean_ua,
            "pooled_confusion": self.pooled_confusion.tolist(),
            "pooled_ua": unweighted_accuracy(self.pooled_confusion),
            "classes": [e.value for e in EMOTION_ORDER],
            "folds": [f.to_dict() for f in self.folds],
        }


def _batches(order: np.ndarray, batch_size: int) -> list:
    batches = [order[s : s + batch_size] for s in range(0, len(order), batch_size)]
    # batchnorm cannot train on a single example; fold it into the previous batch
    if len(batches) > 1 and len(batches[-1]) == 1:
        last = batches.pop()
        batches[-1] = np.concatenate([batches[-1], last])
    return batches


def make_plan(d: Dataset, cfg: TrainConfig) -> FoldPlan:
    groups = d.speakers if cfg.speaker_disjoint else None
    return kfold_split(d.labels, d.ids, cfg.folds, cfg.seed, groups=groups)


def train_fold(d: Dataset, plan: FoldPlan, fold: int, model_cfg: M.ModelConfig,
               cfg: TrainConfig, keep_params: bool = False) -> FoldReport:
    """Train a fresh model on every fold but ``fold`` and evaluate on ``fold``."""
    if not 0 <= fold < plan.k:
        raise ValueError(f"fold index {fold} outside 0..{plan.k - 1}")
    train_idx = d.index_of(plan.train_ids(fold))
    test_idx = d.index_of(plan.folds[fold])
    if len(train_idx) < 2:
        raise ValueError("need at least two training utterances")
    init_seq, shuffle_seq = np.random.SeedSequence([cfg.seed, fold]).spawn(2)
    dtype = np.dtype(cfg.dtype)
    params = M.build(model_cfg, seed=int(init_seq.generate_state(1)[0]), dtype=dtype)
    state = AdamState(lr=cfg.learning_rate, beta1=cfg.beta1, beta2=cfg.beta2, eps=cfg.adam_eps)
    rng = np.random.default_rng(shuffle_seq)

    epoch_losses = []
    best, stale = math.inf, 0
    for epoch in range(cfg.max_epochs):
        order = train_idx[rng.permutation(len(train_idx))]
        total, count = 0.0, 0
        for batch in _batches(order, cfg.batch_size):
            loss, grads, _ = M.loss_and_grads(params, d.features[batch], d.labels[batch])
            if not np.isfinite(loss):
                raise FloatingPointError(f"fold {fold} epoch {epoch}: non-finite loss")
            adam_step(params.weights, grads, state)
            total += loss * len(batch)
            count += len(batch)
        mean_loss = total / count
        epoch_losses.append(mean_loss)
        log.info("fold %d epoch %d loss %.5f", fold, epoch + 1, mean_loss)
        if mean_loss < best:
            best, stale = mean_loss, 0
        else:
            stale += 1
        if mean_loss < cfg.target_loss or stale >= cfg.patience:
            break

    probs = M.predict_proba(params, d.features[test_idx], cfg.eval_batch_size)
    preds = probs.argmax(axis=1)
    cm = confusion_matrix(d.labels[test_idx], preds)
    ua = unweighted_accuracy(cm)
    log.info("fold %d UA %.4f", fold, ua)
    return FoldReport(
        fold, cm, ua, epoch_losses,
        [d.ids[i] for i in train_idx], [d.ids[i] for i in test_idx], probs,
        params if keep_params else None,
    )


def cross_validate(d: Dataset, model_cfg: M.ModelConfig, cfg: TrainConfig,
                   checkpoint_dir=None) -> CVReport:
    plan = make_plan(d, cfg)
    reports = []
    for fold in range(plan.k):
        rep = train_fold(d, plan, fold, model_cfg, cfg, keep_params=checkpoint_dir is not None)
        if checkpoint_dir is not None:
            M.save_checkpoint(
                Path(checkpoint_dir) / f"fold{fold}.npz", rep.params,
                extra={"fold": fold, "seed": cfg.seed, "test_ids": rep.test_ids},
            )
            rep.params = None
        reports.append(rep)
    pooled = sum((r.confusion for r in reports), np.zeros((N_CLASSES, N_CLASSES), dtype=np.int64))
    mean_ua = float(np.mean([r.ua for r in reports]))
    return CVReport(reports, mean_ua, pooled)
