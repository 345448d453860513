"""Pseudo-prior generation for short sequences and random baseline augmentations."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .corpus import pad_truncate
from .encoder import ModelParams, last_hidden
from .errors import FormatError, GenerationError

STRATEGIES = ("bicat", "reverse_only", "mask", "crop", "replace", "add", "none")
GENERATIVE = ("bicat", "reverse_only")
BASELINES = ("mask", "crop", "replace", "add")


@dataclass(frozen=True)
class AugmentConfig:
    K: int = 15
    M: int = 18
    strategy: str = "bicat"
    seed: int = 0
    ratio: float = 0.2
    decode: str = "greedy"  # or "topk"
    topk: int = 5
    augment_eval: bool = False

    def __post_init__(self):
        if self.K < 0 or self.M < 1:
            raise ValueError(f"need K >= 0 and M >= 1, got K={self.K} M={self.M}")
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy {self.strategy!r}")
        if not 0.0 < self.ratio < 1.0:
            raise ValueError(f"ratio must be in (0, 1), got {self.ratio}")
        if self.decode not in ("greedy", "topk"):
            raise ValueError(f"unknown decode rule {self.decode!r}")


@dataclass
class AugmentedEntry:
    user: int
    original: tuple
    augmented: tuple
    generated: int = 0


@dataclass
class AugmentedCorpus:
    entries: list = field(default_factory=list)

    def pairs(self):
        return [(e.augmented, e.original) for e in self.entries]

    def by_user(self):
        return {e.user: e for e in self.entries}

    def total_generated(self):
        return sum(e.generated for e in self.entries)


def _pick(scores, decode, topk, rng):
    if decode == "greedy":
        return scores.argmax(axis=1) + 1
    k = min(topk, scores.shape[1])
    out = np.empty(scores.shape[0], dtype=np.int64)
    for r, row in enumerate(scores):
        top = np.argpartition(-row, k - 1)[:k]
        z = row[top] - row[top].max()
        p = np.exp(z) / np.exp(z).sum()
        out[r] = top[rng.choice(k, p=p)] + 1
    return out


def generate_batch(seqs, params: ModelParams, K: int, M: int, decode="greedy", topk=5, rng=None):
    """Pseudo-prior items for many sequences at once (see :func:`recursive_generate`)."""
    if decode == "topk" and rng is None:
        raise ValueError("top-k decoding needs an rng")
    n = params.config.n
    work = [list(s)[::-1] for s in seqs]
    gen = [[] for _ in seqs]
    for _ in range(K):
        live = [i for i, w in enumerate(work) if len(w) < M]
        if not live:
            break
        x = np.stack([pad_truncate(work[i], n) for i in live])
        scores = last_hidden(x, params) @ params.item_table.data[1:].T
        picks = _pick(scores, decode, topk, rng)
        for i, v in zip(live, picks):
            v = int(v)
            if v <= 0 or v > params.num_items:
                raise GenerationError(f"generated invalid item index {v}")
            work[i].append(v)
            gen[i].insert(0, v)
    return gen


def recursive_generate(seq, params: ModelParams, K: int, M: int, decode="greedy", topk=5, rng=None):
    """Generate up to ``K`` items to prepend to ``seq``, oldest first.

    The reversed sequence is extended one predicted item at a time and
    each new item is fed back as context. Generation stops once the
    working length reaches ``M``; sequences already that long get nothing.
    """
    if not len(seq):
        raise GenerationError("cannot generate for an empty sequence")
    return generate_batch([seq], params, K, M, decode, topk, rng)[0]


def baseline_augment(seq, kind: str, rng, ratio: float = 0.2, num_items: int | None = None):
    """Random perturbation of ``seq``; returns ``(new_seq, applied)``.

    mask: positions set to padding; crop: a contiguous window of length
    ceil((1 - ratio) * len); replace: positions swapped for other random
    items; add: random items inserted at random positions. The count of
    touched positions for mask/replace/add is floor(ratio * len).
    """
    if not 0.0 < ratio < 1.0:
        raise ValueError(f"ratio must be in (0, 1), got {ratio}")
    seq = list(seq)
    if len(seq) < 2:
        return seq, False
    L = len(seq)
    k = int(math.floor(ratio * L))
    out = list(seq)
    if kind == "mask":
        for i in rng.choice(L, size=k, replace=False):
            out[i] = 0
    elif kind == "crop":
        w = int(math.ceil((1.0 - ratio) * L))
        start = int(rng.integers(0, L - w + 1))
        out = seq[start:start + w]
    elif kind == "replace":
        if num_items is None or num_items < 2:
            raise ValueError("replace needs num_items >= 2")
        for i in rng.choice(L, size=k, replace=False):
            v = int(rng.integers(1, num_items))
            out[i] = v + 1 if v >= seq[i] else v  # uniform over items != seq[i]
    elif kind == "add":
        if num_items is None:
            raise ValueError("add needs num_items")
        for _ in range(k):
            out.insert(int(rng.integers(0, len(out) + 1)), int(rng.integers(1, num_items + 1)))
    else:
        raise ValueError(f"unknown baseline augmentation {kind!r}")
    return out, True


def augment_corpus(train_seqs, params: ModelParams | None, config: AugmentConfig) -> AugmentedCorpus:
    """Augment ``{user: items}`` (or ``[(user, items)]``) per ``config.strategy``."""
    items = list(train_seqs.items()) if isinstance(train_seqs, dict) else list(train_seqs)
    rng = np.random.default_rng(config.seed)
    out = AugmentedCorpus()
    if config.strategy in GENERATIVE:
        if params is None:
            raise GenerationError(f"strategy {config.strategy} needs a pre-trained model")
        gens = generate_batch([s for _, s in items], params, config.K, config.M,
                              config.decode, config.topk, rng)
        for (u, s), g in zip(items, gens):
            out.entries.append(AugmentedEntry(u, tuple(s), tuple(g) + tuple(s), len(g)))
    elif config.strategy in BASELINES:
        num_items = params.num_items if params is not None else max(max(s) for _, s in items)
        for u, s in items:
            new, _ = baseline_augment(s, config.strategy, rng, config.ratio, num_items)
            out.entries.append(AugmentedEntry(u, tuple(s), tuple(new), 0))
    else:
        for u, s in items:
            out.entries.append(AugmentedEntry(u, tuple(s), tuple(s), 0))
    return out


def format_augmented(corpus: AugmentedCorpus) -> str:
    return "".join(f"{e.user}\t{e.generated}\t{' '.join(map(str, e.augmented))}\n" for e in corpus.entries)


def parse_augmented(text: str) -> AugmentedCorpus:
    """Inverse of :func:`format_augmented`; the original view is the tail after ``g_u`` items."""
    out = AugmentedCorpus()
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        try:
            user, g, items = line.split("\t")
            seq = tuple(int(x) for x in items.split())
            g = int(g)
        except ValueError as exc:
            raise FormatError(f"augmented line {lineno}: {exc}") from exc
        if g < 0 or g > len(seq):
            raise FormatError(f"augmented line {lineno}: g_u={g} out of range")
        out.entries.append(AugmentedEntry(int(user), seq[g:], seq, g))
    return out
