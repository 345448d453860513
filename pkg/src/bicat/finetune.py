"""Self-knowledge-distillation fine-tuning.

Each step feeds the augmented and original view of the same users
through the encoder. The loss is the clipped next-item BCE on the
augmented view plus ``alpha`` times the symmetric KL divergence between
the two views' item distributions at positions both views share.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .corpus import length_batches, pad_truncate, sample_train_negatives, trim_leading_padding
from .encoder import ModelParams, all_scores, encode, gather_scores
from .errors import AlignmentError, DivergenceError
from .numerics import Tensor, softmax, symmetric_kl_from_logits
from .optim import Adam
from .pretrain import bce_position_loss

KL_FLOOR = 1e-12


@dataclass(frozen=True)
class FinetuneConfig:
    alpha: float = 1.0
    clip_k: int = 8
    epochs: int = 20
    batch_size: int = 128
    lr: float = 1e-3
    seed: int = 0
    rt: bool = False
    kl_vocab_sample: int = 0  # 0 = exact KL over the full vocabulary
    select_best: bool = False  # keep the epoch with the best validation Recall@5

    def __post_init__(self):
        if not math.isfinite(self.alpha) or self.alpha < 0:
            raise ValueError(f"alpha must be finite and >= 0, got {self.alpha}")
        if self.clip_k < 0 or self.epochs < 0 or self.batch_size < 1 or self.kl_vocab_sample < 0:
            raise ValueError(f"invalid finetune config {self}")


def informative_clip(targets, clip_k: int) -> np.ndarray:
    """Mask out the earliest ``clip_k`` supervised positions of each row.

    The last supervised position of a row always survives.
    """
    targets = np.asarray(targets)
    squeeze = targets.ndim == 1
    t = targets[None] if squeeze else targets
    real = t != 0
    # rank of each supervised position counted from the left, 0-based
    rank = np.cumsum(real, axis=1) - 1
    count = real.sum(axis=1, keepdims=True)
    drop = np.minimum(clip_k, np.maximum(count - 1, 0))
    mask = real & (rank >= drop)
    return mask[0] if squeeze else mask


def prediction_distribution(hidden: Tensor, params: ModelParams, columns=None) -> Tensor:
    """Softmax over non-padding item scores at every position."""
    if columns is None:
        return softmax(all_scores(hidden, params), axis=-1)
    return softmax(hidden @ params.item_table.take_rows(columns).T, axis=-1)


def bidirectional_kl(p1, p2, weights=None) -> Tensor:
    """``0.5 * [KL(p1||p2) + KL(p2||p1)]`` averaged over positions.

    Inputs are probability tensors ``(..., V)``; probabilities are floored
    at 1e-12 inside the logarithms. ``weights`` selects positions.
    """
    p1 = p1 if isinstance(p1, Tensor) else Tensor(p1)
    p2 = p2 if isinstance(p2, Tensor) else Tensor(p2)
    if p1.shape != p2.shape:
        raise AlignmentError(f"unaligned distributions {p1.shape} vs {p2.shape}")
    log1 = p1.clip(KL_FLOOR, 1.0).log()
    log2 = p2.clip(KL_FLOOR, 1.0).log()
    per_pos = ((p1 - p2) * (log1 - log2)).sum(axis=-1) * 0.5
    if weights is None:
        return per_pos.mean()
    w = np.asarray(weights, dtype=float)
    if w.shape != per_pos.shape:
        raise AlignmentError(f"weights {w.shape} do not match positions {per_pos.shape}")
    if w.sum() <= 0:
        raise AlignmentError("no aligned positions")
    return (per_pos * Tensor(w)).sum() * (1.0 / w.sum())


@dataclass
class DualBatch:
    aug_inputs: np.ndarray
    aug_targets: np.ndarray
    aug_negatives: np.ndarray
    clip_mask: np.ndarray
    org_inputs: np.ndarray
    org_targets: np.ndarray
    kl_mask: np.ndarray  # positions shared by both views (from the end)


def build_dual_batch(pairs, n, num_items, rng, clip_k=0) -> DualBatch:
    """``pairs`` is a list of ``(augmented, original)`` item lists.

    Both views are right-aligned, so the real positions of the original
    view occupy the same columns in the augmented view.
    """
    ai, at, an, oi, ot = [], [], [], [], []
    for aug, org in pairs:
        aug, org = list(aug), list(org)
        t = pad_truncate(aug[1:], n)
        ai.append(pad_truncate(aug[:-1], n))
        at.append(t)
        an.append(sample_train_negatives(t, num_items, [x for x in aug if x], rng))
        oi.append(pad_truncate(org[:-1], n))
        ot.append(pad_truncate(org[1:], n))
    ai, at, an, oi, ot = trim_leading_padding(*map(np.stack, (ai, at, an, oi, ot)))
    return DualBatch(ai, at, an, informative_clip(at, clip_k), oi, ot, ot != 0)


def finetune_losses(batch: DualBatch, params: ModelParams, alpha, train=False, rng=None, columns=None):
    """Returns ``(total, bce_aug, kl)`` as tensors."""
    h_aug = encode(batch.aug_inputs, params, train, rng)
    bce = bce_position_loss(gather_scores(h_aug, batch.aug_targets, params),
                            gather_scores(h_aug, batch.aug_negatives, params), batch.clip_mask)
    if batch.kl_mask.any():
        h_org = encode(batch.org_inputs, params, train, rng)
        table = params.item_table[1:] if columns is None else params.item_table.take_rows(columns)
        # only aligned positions enter the divergence
        z1 = h_aug[batch.kl_mask] @ table.T
        z2 = h_org[batch.kl_mask] @ table.T
        kl = symmetric_kl_from_logits(z1, z2, KL_FLOOR).mean()
    else:
        kl = Tensor(0.0)
    return bce + kl * alpha, bce, kl


def finetune_step(batch, params, optimizer, config: FinetuneConfig, rng=None, step=0, columns=None):
    """One gradient step on ``bce_aug + alpha * kl``; returns the three losses."""
    params.zero_grad()
    total, bce, kl = finetune_losses(batch, params, config.alpha, train=True, rng=rng, columns=columns)
    if not np.isfinite(total.data):
        raise DivergenceError(step, total.item())
    total.backward()
    optimizer.step()
    return total.item(), bce.item(), kl.item()


def _kl_columns(batch, num_items, k, rng):
    picked = rng.choice(num_items, size=min(k, num_items), replace=False) + 1
    used = np.concatenate([picked, batch.aug_targets[batch.aug_targets != 0]])
    return np.unique(used)


def run_finetune(pairs, params: ModelParams, config: FinetuneConfig, log=None, on_epoch=None):
    """Epoch loop over ``(augmented, original)`` pairs.

    Pairs whose augmented view has fewer than two items carry no
    supervision and are skipped. ``on_epoch(epoch, params)`` is called
    after every epoch. Returns ``(params, trace)``.
    """
    pairs = [(list(a), list(o)) for a, o in pairs if len(a) >= 2]
    lengths = [len(a) for a, _ in pairs]
    rng = np.random.default_rng(config.seed)
    opt = Adam(params, lr=config.lr)
    n, num_items = params.config.n, params.num_items
    trace = []
    step = 0
    for epoch in range(1, config.epochs + 1):
        sums = np.zeros(3)
        batches = 0
        for idx in length_batches(lengths, config.batch_size, rng):
            chunk = [pairs[i] for i in idx]
            batch = build_dual_batch(chunk, n, num_items, rng, config.clip_k)
            cols = _kl_columns(batch, num_items, config.kl_vocab_sample, rng) if config.kl_vocab_sample else None
            step += 1
            sums += finetune_step(batch, params, opt, config, rng, step, cols)
            batches += 1
        total, bce, kl = sums / max(batches, 1)
        trace.append({"epoch": epoch, "loss_bce": bce, "loss_kl": kl, "loss_total": total})
        if log:
            log(f"finetune epoch {epoch}: total={total:.4f} bce={bce:.4f} kl={kl:.4f}")
        if on_epoch:
            on_epoch(epoch, params)
    return params, trace
