"""Training and evaluation loops.

Each epoch shuffles the training pairs with a seeded stream, groups them
into effective batches, and averages the per-micro-batch losses across
the configured number of gradient-accumulation chunks before every
optimizer step, so accumulation only changes memory, not the parameter
trajectory. The checkpoint with the best validation compound score wins.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateError, DivergedError
from .graphs import IP_RELATIONS, RELATIONS, ForecastExample
from .metrics import (
    MetricsReport,
    attachment_degrees,
    compound_score,
    degree_table,
    macro_accuracy,
    macro_auroc,
    macro_precision,
    mae,
    mse,
)
from .nn import Adam
from .rng import seeded_rng


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 75
    batch_size: int = 64
    grad_accumulation: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size <= 0 or self.grad_accumulation < 1:
            raise ValueError("invalid training configuration")


@dataclass
class EpochStats:
    epoch: int
    train_loss: float
    val_compscore: float


@dataclass
class TrainResult:
    best_state: dict[str, np.ndarray]
    best_score: float
    best_epoch: int
    history: list[EpochStats] = field(default_factory=list)
    pruned: bool = False


def train(
    model,
    train_examples: list[ForecastExample],
    val_examples: list[ForecastExample],
    cfg: TrainConfig,
    rung_callback=None,
) -> TrainResult:
    """Train a model, checkpointing on the best validation compound score.

    rung_callback(epoch, score) is invoked after every epoch; returning
    False stops the run early (used by the tuning pruner). The model is
    left holding the best checkpoint.
    """
    if cfg.epochs > 0 and (not train_examples or not val_examples):
        raise ValueError("training requires nonempty train and validation splits")
    opt = Adam(model.parameters(), lr=model.hyper.learning_rate)
    best_state = model.state_arrays()
    best_score = float("-inf")
    best_epoch = 0
    history: list[EpochStats] = []
    pruned = False

    for epoch in range(1, cfg.epochs + 1):
        rng = seeded_rng(cfg.seed, 1000 + epoch)
        order = rng.permutation(len(train_examples))
        loss_sum = 0.0
        loss_count = 0
        for start in range(0, len(order), cfg.batch_size):
            group = order[start : start + cfg.batch_size]
            chunks = [c for c in np.array_split(group, cfg.grad_accumulation) if len(c)]
            opt.zero_grad()
            for chunk in chunks:
                losses = [model.loss(train_examples[i], rng)[0] for i in chunk]
                acc = losses[0]
                for l in losses[1:]:
                    acc = acc + l
                micro = acc * (1.0 / (len(losses) * len(chunks)))
                if not np.isfinite(micro.data):
                    raise DivergedError(f"non-finite loss at epoch {epoch}")
                micro.backward()
                loss_sum += float(sum(l_.data for l_ in losses))
                loss_count += len(losses)
            opt.step()
        val_score = evaluate(model, val_examples).compound_score
        history.append(EpochStats(epoch, loss_sum / max(loss_count, 1), val_score))
        if val_score > best_score:
            best_score = val_score
            best_epoch = epoch
            best_state = model.state_arrays()
        if rung_callback is not None and not rung_callback(epoch, val_score):
            pruned = True
            break

    model.load_state_arrays(best_state)
    return TrainResult(best_state, best_score, best_epoch, history, pruned)


def evaluate(model, examples: list[ForecastExample]) -> MetricsReport:
    """Forecast every pair and accumulate feature errors (numeric
    features only), per-relation macro metrics, the compound score, and
    degree-rank tables."""
    if not examples:
        raise ValueError("cannot evaluate on an empty example list")
    numeric_pred = []
    numeric_target = []
    preds = {rel: [] for rel in RELATIONS}
    targets = {rel: [] for rel in RELATIONS}
    scores = {rel: [] for rel in RELATIONS}
    for ex in examples:
        res = model.forecast(ex)
        n_num = res.numeric_pred.shape[1]
        numeric_pred.append(res.numeric_pred)
        numeric_target.append(ex.pair.next.conn_features[:, :n_num])
        for rel in RELATIONS:
            preds[rel].append(res.attachments[rel])
            targets[rel].append(ex.targets.by_relation(rel))
            scores[rel].append(res.logits[rel])

    pred_mat = np.concatenate(numeric_pred)
    target_mat = np.concatenate(numeric_target)
    mae_val = mae(pred_mat, target_mat)
    mse_val = mse(pred_mat, target_mat)

    per_relation: dict[str, dict[str, float]] = {}
    accs, precs, aurocs = [], [], []
    for rel in RELATIONS:
        p = np.concatenate(preds[rel])
        t = np.concatenate(targets[rel])
        s = np.concatenate(scores[rel])
        n_classes = model.vocab_size if rel in IP_RELATIONS else 8
        acc = macro_accuracy(p, t, n_classes)
        prec = macro_precision(p, t, n_classes)
        entry = {"accuracy": acc, "precision": prec}
        try:
            auroc = macro_auroc(s, t)
            entry["auroc"] = auroc
            aurocs.append(auroc)
        except DegenerateError:
            pass
        accs.append(acc)
        precs.append(prec)
        per_relation[rel] = entry

    acc = float(np.mean(accs))
    prec = float(np.mean(precs))
    auroc = float(np.mean(aurocs)) if aurocs else 0.5

    ip_actual = np.zeros(model.vocab_size, dtype=np.int64)
    ip_pred = np.zeros(model.vocab_size, dtype=np.int64)
    port_actual = np.zeros(8, dtype=np.int64)
    port_pred = np.zeros(8, dtype=np.int64)
    for rel in IP_RELATIONS:
        ip_actual += attachment_degrees(np.concatenate(targets[rel]), model.vocab_size)
        ip_pred += attachment_degrees(np.concatenate(preds[rel]), model.vocab_size)
    for rel in ("src_port", "dst_port"):
        port_actual += attachment_degrees(np.concatenate(targets[rel]), 8)
        port_pred += attachment_degrees(np.concatenate(preds[rel]), 8)

    return MetricsReport(
        mae=mae_val,
        mse=mse_val,
        macro_accuracy=acc,
        macro_auroc=auroc,
        macro_precision=prec,
        compound_score=compound_score(acc, auroc, mae_val),
        per_relation=per_relation,
        ip_degree=degree_table(ip_actual, ip_pred),
        port_degree=degree_table(port_actual, port_pred),
    )
