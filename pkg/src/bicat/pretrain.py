"""Bidirectional chronological pre-training.

The encoder learns to predict earlier items from a reversed sequence
(reverse loss) while a forward constraint asks it to predict the
original items from ``[v0, v1, ..., v_{n-1}]``, where ``v0`` is the
model's own current guess for the item preceding ``v1``. The total
loss is ``reverse + lam * forward``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .corpus import length_batches, pad_truncate, sample_train_negatives, trim_leading_padding
from .encoder import ModelParams, encode, gather_scores, last_hidden
from .errors import DivergenceError, LossError
from .numerics import Tensor
from .optim import Adam

SIGMOID_FLOOR = 1e-12


@dataclass(frozen=True)
class PretrainConfig:
    lam: float = 0.4
    epochs: int = 20
    batch_size: int = 128
    lr: float = 1e-3
    seed: int = 0
    forward_last_only: bool = False
    clip_k: int = 0
    checkpoint_every: int = 0  # 0 = only the final checkpoint

    def __post_init__(self):
        if not math.isfinite(self.lam) or self.lam < 0:
            raise ValueError(f"lambda must be finite and >= 0, got {self.lam}")
        if self.epochs < 0 or self.batch_size < 1 or self.clip_k < 0 or self.checkpoint_every < 0:
            raise ValueError(f"invalid pretrain config {self}")


@dataclass
class DirectionalBatch:
    rev_inputs: np.ndarray
    rev_targets: np.ndarray
    rev_negatives: np.ndarray
    rev_mask: np.ndarray
    fwd_inputs: np.ndarray
    fwd_targets: np.ndarray
    fwd_negatives: np.ndarray
    fwd_mask: np.ndarray
    pseudo_prior: np.ndarray


def reverse_sequence(items):
    return list(items)[::-1]


def bce_position_loss(scores_pos, scores_neg, mask) -> Tensor:
    """Mean over masked-in positions of ``-[log s(pos) + log(1 - s(neg))]``.

    ``s`` is the logistic function, clamped to ``[1e-12, 1 - 1e-12]``.
    """
    mask = np.asarray(mask, dtype=float)
    total = mask.sum()
    if total <= 0:
        raise LossError("no supervised positions in batch")
    lo, hi = SIGMOID_FLOOR, 1.0 - SIGMOID_FLOOR
    pos = scores_pos.sigmoid().clip(lo, hi).log()
    neg = (1.0 - scores_neg.sigmoid().clip(lo, hi)).log()
    return -((pos + neg) * Tensor(mask)).sum() * (1.0 / total)


def greedy_prior(seqs, params: ModelParams) -> np.ndarray:
    """The current model's best guess for the item just before each sequence."""
    n = params.config.n
    rev = np.stack([pad_truncate(reverse_sequence(s), n) for s in seqs])
    scores = last_hidden(rev, params) @ params.item_table.data[1:].T
    return scores.argmax(axis=1) + 1


def build_directional_batch(seqs, params: ModelParams, rng, forward_last_only=False,
                            clip_k=0, pseudo_prior=None) -> DirectionalBatch:
    from .finetune import informative_clip

    n, num_items = params.config.n, params.num_items
    if pseudo_prior is None:
        pseudo_prior = greedy_prior(seqs, params)
    rows = {k: [] for k in ("ri", "rt", "rn", "fi", "ft", "fn")}
    for s, v0 in zip(seqs, pseudo_prior):
        s = list(s)
        rev = reverse_sequence(s)
        rt = pad_truncate(rev[1:], n)
        rows["ri"].append(pad_truncate(rev[:-1], n))
        rows["rt"].append(rt)
        rows["rn"].append(sample_train_negatives(rt, num_items, s, rng))
        ft = pad_truncate(s, n)
        rows["fi"].append(pad_truncate([int(v0)] + s[:-1], n))
        rows["ft"].append(ft)
        # v0 is excluded too unless that would leave no item to sample
        fwd_exclude = s + [int(v0)] if len(set(s) | {int(v0)}) < num_items else s
        rows["fn"].append(sample_train_negatives(ft, num_items, fwd_exclude, rng))
    ri, rt, rn = trim_leading_padding(*(np.stack(rows[k]) for k in ("ri", "rt", "rn")))
    fi, ft, fn = trim_leading_padding(*(np.stack(rows[k]) for k in ("fi", "ft", "fn")))
    rev_mask = rt != 0
    fwd_mask = ft != 0
    if forward_last_only:
        fwd_mask = np.zeros_like(fwd_mask)
        fwd_mask[:, -1] = True
    if clip_k:
        rev_mask = informative_clip(rt, clip_k)
        fwd_mask &= informative_clip(ft, clip_k)
    return DirectionalBatch(ri, rt, rn, rev_mask, fi, ft, fn, fwd_mask, np.asarray(pseudo_prior))


def directional_losses(batch: DirectionalBatch, params: ModelParams, train=False, rng=None):
    """(reverse loss, forward loss) through one shared encoder."""
    h = encode(batch.rev_inputs, params, train, rng)
    l_rev = bce_position_loss(gather_scores(h, batch.rev_targets, params),
                              gather_scores(h, batch.rev_negatives, params), batch.rev_mask)
    h = encode(batch.fwd_inputs, params, train, rng)
    l_fwd = bce_position_loss(gather_scores(h, batch.fwd_targets, params),
                              gather_scores(h, batch.fwd_negatives, params), batch.fwd_mask)
    return l_rev, l_fwd


def pretrain_loss(batch, params, lam, train=False, rng=None):
    l_rev, l_fwd = directional_losses(batch, params, train, rng)
    return l_rev + l_fwd * lam, l_rev, l_fwd


def pretrain_step(batch, params, optimizer, config: PretrainConfig, rng=None, step=0):
    """One gradient step on ``reverse + lam * forward``; returns the three losses."""
    params.zero_grad()
    total, l_rev, l_fwd = pretrain_loss(batch, params, config.lam, train=True, rng=rng)
    if not np.isfinite(total.data):
        raise DivergenceError(step, total.item())
    total.backward()
    optimizer.step()
    return total.item(), l_rev.item(), l_fwd.item()


def run_pretrain(sequences, params: ModelParams, config: PretrainConfig, log=None, on_epoch=None):
    """Epoch loop with seeded shuffling.

    ``sequences`` are chronological training item lists; those shorter
    than 2 carry no reverse supervision and are skipped. ``on_epoch(epoch,
    params)`` is called after every epoch. Returns ``(params, trace)``
    where ``trace`` holds one dict per epoch.
    """
    seqs = [list(s) for s in sequences if len(s) >= 2]
    lengths = [len(s) for s in seqs]
    rng = np.random.default_rng(config.seed)
    opt = Adam(params, lr=config.lr)
    trace = []
    step = 0
    for epoch in range(1, config.epochs + 1):
        sums = np.zeros(3)
        batches = 0
        for idx in length_batches(lengths, config.batch_size, rng):
            chunk = [seqs[i] for i in idx]
            batch = build_directional_batch(chunk, params, rng, config.forward_last_only, config.clip_k)
            step += 1
            sums += pretrain_step(batch, params, opt, config, rng, step)
            batches += 1
        total, rev, fwd = sums / max(batches, 1)
        trace.append({"epoch": epoch, "loss_reverse": rev, "loss_forward": fwd, "loss_total": total})
        if log:
            log(f"pretrain epoch {epoch}: total={total:.4f} reverse={rev:.4f} forward={fwd:.4f}")
        if on_epoch:
            on_epoch(epoch, params)
    return params, trace
