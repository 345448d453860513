"""Interaction logs, per-user chronological sequences, splits and sampling."""
from __future__ import annotations

import csv
import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import FormatError, SamplingError, SplitError

DEFAULT_COLUMNS = ("user", "item", "rating", "timestamp")
PAD = 0


@dataclass(frozen=True)
class Interaction:
    user: str
    item: str
    timestamp: int


@dataclass(frozen=True)
class CsvSpec:
    """Column layout of a delimited interaction log."""

    columns: tuple = DEFAULT_COLUMNS
    delimiter: str = ","
    header: bool = False

    def __post_init__(self):
        missing = {"user", "item", "timestamp"} - set(self.columns)
        if missing:
            raise FormatError(f"column spec lacks {sorted(missing)}")


@dataclass
class ParsedLog:
    interactions: list
    malformed: list = field(default_factory=list)  # 1-based line numbers

    @property
    def malformed_count(self):
        return len(self.malformed)


def _parse_timestamp(raw):
    ts = float(raw)
    if not math.isfinite(ts) or ts < 0 or ts != int(ts):
        raise ValueError(raw)
    return int(ts)


def parse_interactions(lines: Iterable[str], spec: CsvSpec | None = None) -> ParsedLog:
    """Parse delimited records into interactions.

    Blank lines are skipped. Records with missing fields, empty ids or a
    bad timestamp are counted as malformed; if more than half of the
    records are malformed the whole stream is rejected.
    """
    spec = spec or CsvSpec()
    pos = {name: i for i, name in enumerate(spec.columns)}
    width = len(spec.columns)
    out, bad, total = [], [], 0
    reader = csv.reader(lines, delimiter=spec.delimiter)
    for row in reader:
        lineno = reader.line_num
        if not row or all(not c.strip() for c in row):
            continue
        if spec.header and lineno == 1:
            continue
        total += 1
        try:
            if len(row) < width:
                raise ValueError("short row")
            user = row[pos["user"]].strip()
            item = row[pos["item"]].strip()
            if not user or not item:
                raise ValueError("empty id")
            ts = _parse_timestamp(row[pos["timestamp"]].strip())
        except ValueError:
            bad.append(lineno)
            continue
        out.append(Interaction(user, item, ts))
    if total and len(bad) * 2 > total:
        raise FormatError(f"{len(bad)} of {total} records malformed (first at line {bad[0]})")
    return ParsedLog(out, bad)


class Vocab:
    """Bijection between item strings and indices 1..|V|; 0 is padding."""

    def __init__(self, items: Sequence[str] = ()):
        self._items = [None]
        self._index = {}
        for it in items:
            self.add(it)

    def add(self, item):
        if item not in self._index:
            self._index[item] = len(self._items)
            self._items.append(item)
        return self._index[item]

    def index(self, item):
        return self._index[item]

    def item(self, index):
        if index <= 0 or index >= len(self._items):
            raise IndexError(index)
        return self._items[index]

    def __len__(self):
        return len(self._items) - 1

    def __contains__(self, item):
        return item in self._index

    def items(self):
        return list(self._items[1:])

    def __eq__(self, other):
        return isinstance(other, Vocab) and self._items == other._items


@dataclass(frozen=True)
class UserSequence:
    user: int
    items: tuple

    def __post_init__(self):
        if len(self.items) < 1 or PAD in self.items:
            raise ValueError("user sequence must be nonempty and padding-free")

    def __len__(self):
        return len(self.items)


@dataclass(frozen=True)
class SplitSequence:
    train: tuple
    valid: int
    test: int

    @property
    def history(self):
        """Model input at test time: training items plus the validation item."""
        return self.train + (self.valid,)

    def reconstruct(self):
        return self.train + (self.valid, self.test)


def build_sequences(interactions: Iterable[Interaction], min_len: int = 3):
    """Group by user, stable-sort by timestamp, drop users below ``min_len``.

    Users are numbered from 1 in order of first appearance; items are
    numbered in order of first appearance across the retained sequences.
    """
    per_user = {}
    for order, it in enumerate(interactions):
        per_user.setdefault(it.user, []).append((it.timestamp, order, it.item))
    vocab = Vocab()
    sequences = []
    for user, events in per_user.items():
        if len(events) < min_len:
            continue
        events.sort(key=lambda e: (e[0], e[1]))
        items = tuple(vocab.add(e[2]) for e in events)
        sequences.append(UserSequence(len(sequences) + 1, items))
    return vocab, sequences


def leave_one_out(seq) -> SplitSequence:
    items = tuple(seq.items if isinstance(seq, UserSequence) else seq)
    if len(items) < 3:
        raise SplitError(f"leave-one-out needs at least 3 items, got {len(items)}")
    return SplitSequence(items[:-2], items[-2], items[-1])


def pad_truncate(items, n: int) -> np.ndarray:
    """Keep the last ``n`` items, left-padding with zeros."""
    items = list(items)[-n:] if n > 0 else []
    out = np.zeros(n, dtype=np.int64)
    if items:
        out[n - len(items):] = items
    return out


def trim_leading_padding(*arrays):
    """Drop leading columns that are padding in every row of every array.

    With right-aligned positions this leaves encoder outputs at real
    positions unchanged.
    """
    live = np.zeros(arrays[0].shape[1], dtype=bool)
    for a in arrays:
        live |= (a != PAD).any(axis=0)
    start = int(np.argmax(live)) if live.any() else arrays[0].shape[1] - 1
    return tuple(a[:, start:] for a in arrays)


def length_batches(lengths, batch_size: int, rng, pool: int = 8):
    """Shuffled mini-batches of indices grouped by similar length.

    Indices are shuffled, cut into pools of ``pool`` batches, sorted by
    length inside each pool, split into batches, and the batch order is
    shuffled again.
    """
    order = rng.permutation(len(lengths))
    lengths = np.asarray(lengths)
    span = batch_size * pool
    batches = []
    for start in range(0, len(order), span):
        chunk = order[start:start + span]
        chunk = chunk[np.argsort(lengths[chunk], kind="stable")]
        batches.extend(chunk[i:i + batch_size] for i in range(0, len(chunk), batch_size))
    return [batches[i] for i in rng.permutation(len(batches))]


def sample_train_negatives(targets, num_items: int, exclude, rng) -> np.ndarray:
    """One uniform negative per non-padding target, avoiding ``exclude``.

    Padding targets receive 0.
    """
    targets = np.asarray(targets)
    exclude = set(int(x) for x in exclude) | set(int(x) for x in targets[targets != PAD])
    if len(exclude - {PAD}) >= num_items:
        raise SamplingError("no item left to sample as a negative")
    out = np.zeros_like(targets)
    need = targets != PAD
    todo = int(need.sum())
    draws = np.empty(0, dtype=np.int64)
    ex = np.fromiter(exclude, dtype=np.int64) if exclude else np.empty(0, dtype=np.int64)
    while draws.size < todo:
        cand = rng.integers(1, num_items + 1, size=max(2 * (todo - draws.size), 4))
        draws = np.concatenate([draws, cand[~np.isin(cand, ex)]])
    out[need] = draws[:todo]
    return out


def sample_eval_candidates(interacted, truth: int, num_items: int, rng, count: int = 100,
                           popularity=None) -> list:
    """Ground truth plus ``count`` distinct never-interacted items, shuffled.

    ``popularity`` (optional weights over indices 0..|V|) switches from
    uniform to popularity-proportional negative sampling.
    """
    seen = set(int(x) for x in interacted) | {int(truth)}
    available = num_items - len(seen - {PAD})
    if available < count:
        raise SamplingError(f"only {available} non-interacted items, need {count}")
    chosen = []
    taken = set(seen)
    if popularity is not None:
        w = np.asarray(popularity, dtype=float).copy()
        w[PAD] = 0.0
        w[list(seen - {PAD})] = 0.0
        if count and np.count_nonzero(w) < count:
            raise SamplingError("not enough items with nonzero popularity")
        if count:
            chosen = [int(x) for x in rng.choice(len(w), size=count, replace=False, p=w / w.sum())]
    else:
        while len(chosen) < count:
            for x in rng.integers(1, num_items + 1, size=count - len(chosen)):
                x = int(x)
                if x not in taken:
                    taken.add(x)
                    chosen.append(x)
                    if len(chosen) == count:
                        break
    cands = [int(truth)] + chosen
    return [cands[i] for i in rng.permutation(len(cands))]


def length_histogram(sequences) -> Counter:
    return Counter(len(s) for s in sequences)


# -- files -------------------------------------------------------------------

def format_sequences(sequences) -> str:
    return "".join(f"{s.user}\t{' '.join(map(str, s.items))}\n" for s in sequences)


def parse_sequences(text: str) -> list:
    out = []
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        try:
            user, items = line.split("\t")
            out.append(UserSequence(int(user), tuple(int(x) for x in items.split())))
        except ValueError as exc:
            raise FormatError(f"sequences line {lineno}: {exc}") from exc
    return out


def format_vocab(vocab: Vocab) -> str:
    return "".join(f"{item}\t{i}\n" for i, item in enumerate(vocab.items(), 1))


def parse_vocab(text: str) -> Vocab:
    pairs = []
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        try:
            item, idx = line.rsplit("\t", 1)
            pairs.append((int(idx), item))
        except ValueError as exc:
            raise FormatError(f"vocab line {lineno}: {exc}") from exc
    pairs.sort()
    if [i for i, _ in pairs] != list(range(1, len(pairs) + 1)):
        raise FormatError("vocab indices must be exactly 1..|V|")
    return Vocab([it for _, it in pairs])
