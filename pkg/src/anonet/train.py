"""Deterministic training loop: model + data + loss + Adadelta.

Per epoch: shuffled batches (seeded by (seed, epoch)), forward in BN
training mode, loss gradient, backward, one Adadelta step over the
trainable parameters; then a validation pass in BN inference mode whose
F1/AUROC land in the history.  Frozen layers never receive updates.
"""

import csv
import os
from dataclasses import dataclass, asdict

import numpy as np

from . import nn
from .data import make_batches
from .metrics import MetricsReport, auroc, f1_score
from .model import save_weights


class TrainingDiverged(RuntimeError):
    """Raised when the loss turns non-finite; last checkpoint is retained."""


@dataclass
class TrainConfig:
    epochs: int = 25
    batch: int = 16
    loss: str = "mse"            # "mse" | "cross_entropy"
    rho: float = 0.95
    epsilon: float = 1e-6
    seed: int = 0
    checkpoint_every: int = 0    # 0 = only final weights
    threshold: float = 0.0
    pooling: str = "pixel"
    crop: tuple = None

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.loss not in ("mse", "cross_entropy"):
            raise ValueError(f"unknown loss {self.loss!r}")

    def to_dict(self):
        return asdict(self)


def _pool_target(target, oh, ow):
    """Block-max pool (N, 1, H, W) targets down to the network's output size.

    Needed for the downsampling configurations (output H/4 x W/4): a block
    containing any anomalous pixel counts as anomalous.  The image size
    must be an integer multiple of the output size.
    """
    h, w = target.shape[-2:]
    if (h, w) == (oh, ow):
        return target
    if h % oh or w % ow:
        raise ValueError(
            f"cannot pool {h}x{w} targets to {oh}x{ow}: non-integer factor")
    fh, fw = h // oh, w // ow
    blocks = target.reshape(*target.shape[:-2], oh, fh, ow, fw)
    return blocks.max(axis=-1).max(axis=-2)


def _batch_loss(pred, target, kind):
    """Loss and gradient w.r.t. the tanh output for either loss key.

    Cross entropy remaps the tanh output to (0,1) via (y+1)/2 and the
    +-1 targets to {0,1}; the 1/2 chain factor is folded into the grad.
    """
    if kind == "mse":
        return nn.mse_loss(pred, target)
    prob = (pred.astype(np.float64) + 1.0) * 0.5
    tgt01 = (target > 0).astype(np.float64)
    loss, grad_prob = nn.cross_entropy_loss(prob.astype(np.float32), tgt01)
    return loss, (0.5 * grad_prob).astype(np.float32)


def train(model, train_ds, val_ds=None, cfg=None, out_dir=None):
    """Train in place; returns (model, history).

    History rows: {"epoch", "loss", "f1", "auroc"} with metrics from the
    validation set (None entries when no validation set is given).  With
    ``out_dir`` set, writes history.csv, final weights and periodic
    checkpoints there.
    """
    cfg = cfg or TrainConfig()
    if not train_ds.samples:
        raise ValueError("training dataset is empty")
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
    state = nn.AdadeltaState(rho=cfg.rho, epsilon=cfg.epsilon)
    history = []
    last_checkpoint = None
    for epoch in range(1, cfg.epochs + 1):
        model.set_mode("train")
        epoch_loss = 0.0
        n_batches = 0
        for images, targets, _ids in make_batches(
                train_ds, batch=cfg.batch, seed=cfg.seed, epoch=epoch, crop=cfg.crop):
            pred = model.forward(images, keep_cache=True)
            targets = _pool_target(targets, pred.shape[2], pred.shape[3])
            loss, grad = _batch_loss(pred, targets, cfg.loss)
            if not np.isfinite(loss):
                raise TrainingDiverged(
                    f"non-finite loss at epoch {epoch} "
                    f"(last checkpoint: {last_checkpoint or 'none'})")
            layer_grads, _ = model.backward(grad)
            params, grads = [], []
            for arr, (idx, key) in model.trainable_parameters():
                params.append(arr)
                grads.append(layer_grads[idx][key])
            nn.adadelta_step(params, grads, state)
            epoch_loss += loss
            n_batches += 1
        row = {"epoch": epoch, "loss": epoch_loss / n_batches, "f1": None, "auroc": None}
        if val_ds is not None and val_ds.samples:
            report = validate(model, val_ds, threshold=cfg.threshold,
                              pooling=cfg.pooling, epoch=epoch)
            row["f1"] = report.f1
            row["auroc"] = report.auroc
        history.append(row)
        if out_dir and cfg.checkpoint_every and epoch % cfg.checkpoint_every == 0:
            last_checkpoint = os.path.join(out_dir, f"checkpoint_ep{epoch:03d}.anonet")
            save_weights(model, last_checkpoint)
    if out_dir:
        save_weights(model, os.path.join(out_dir, "weights.anonet"))
        write_history_csv(history, os.path.join(out_dir, "history.csv"))
    return model, history


def predict(model, image):
    """Score map for one (H, W) image, BN in inference mode."""
    model.set_mode("eval")
    img = np.asarray(image, dtype=np.float32)[None, None, :, :]
    return model.forward(img)[0, 0]


def validate(model, dataset, threshold=0.0, pooling="pixel", epoch=0, name=None):
    """F1@threshold and AUROC over a validation set.

    "pixel" pooling concatenates every pixel of every image before
    computing the metrics; "image" averages per-image values (AUROC over
    the images where it is defined).
    """
    if not dataset.samples:
        raise ValueError("validation dataset is empty")
    if pooling not in ("pixel", "image"):
        raise ValueError(f"unknown pooling {pooling!r}")
    scores, truths = [], []
    for s in dataset.samples:
        sc = predict(model, s.image)
        truth = _pool_target(s.mask[None, None], sc.shape[0], sc.shape[1])[0, 0]
        scores.append(sc.reshape(-1))
        truths.append(truth.reshape(-1))
    name = name or dataset.split
    if pooling == "pixel":
        pooled_s = np.concatenate(scores)
        pooled_t = np.concatenate(truths)
        f1, counts = f1_score(pooled_s, pooled_t, threshold)
        auc = auroc(pooled_s, pooled_t)
        degenerate = (2 * counts[0] + counts[1] + counts[2]) == 0
        return MetricsReport(name, f1, auc, counts, epoch=epoch,
                             degenerate=degenerate, pooling="pixel")
    f1s, aucs = [], []
    totals = np.zeros(4, dtype=np.int64)
    for sc, tr in zip(scores, truths):
        f1, counts = f1_score(sc, tr, threshold)
        f1s.append(f1)
        totals += np.asarray(counts)
        a = auroc(sc, tr)
        if a is not None:
            aucs.append(a)
    return MetricsReport(name, float(np.mean(f1s)),
                         float(np.mean(aucs)) if aucs else None,
                         tuple(int(t) for t in totals), epoch=epoch,
                         degenerate=False, pooling="image")


HISTORY_COLUMNS = ["epoch", "loss", "f1", "auroc"]


def write_history_csv(history, path):
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=HISTORY_COLUMNS)
        writer.writeheader()
        for row in history:
            writer.writerow({k: ("" if row[k] is None else repr(float(row[k]))
                                 if k != "epoch" else row[k])
                             for k in HISTORY_COLUMNS})
