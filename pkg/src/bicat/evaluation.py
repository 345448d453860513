"""Leave-one-out ranking evaluation against sampled negatives."""
from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field

import numpy as np

from .corpus import pad_truncate, sample_eval_candidates
from .encoder import ModelParams, last_hidden
from .errors import MetricError, ProtocolError, SamplingError

BUCKETS = ("L<=3", "3<L<=20", "20<L<=50", "L>50")
DEFAULT_KS = (1, 5, 10)


def bucket_of(length: int) -> str:
    if length <= 3:
        return BUCKETS[0]
    if length <= 20:
        return BUCKETS[1]
    if length <= 50:
        return BUCKETS[2]
    return BUCKETS[3]


@dataclass(frozen=True)
class RankedResult:
    user: int
    rank: int
    candidates: int
    tied: bool = False

    def __post_init__(self):
        if not 1 <= self.rank <= self.candidates:
            raise ValueError(f"rank {self.rank} outside 1..{self.candidates}")


def rank_of(scores, truth_pos: int):
    """1-based rank of ``scores[truth_pos]``; ties go to earlier list entries.

    Returns ``(rank, tied)``.
    """
    scores = np.asarray(scores)
    s = scores[truth_pos]
    higher = int((scores > s).sum())
    equal_before = int((scores[:truth_pos] == s).sum())
    tied = bool((scores == s).sum() > 1)
    return 1 + higher + equal_before, tied


def rank_candidates(params: ModelParams, history, candidates, truth: int, user: int = 0) -> RankedResult:
    """Score ``candidates`` at the final real position of ``history``."""
    if list(candidates).count(truth) != 1:
        raise ProtocolError("candidates must contain the ground truth exactly once")
    h = last_hidden(pad_truncate(history, params.config.n)[None], params)[0]
    scores = params.item_table.data[np.asarray(candidates)] @ h
    rank, tied = rank_of(scores, list(candidates).index(truth))
    return RankedResult(user, rank, len(candidates), tied)


def _ranks(results):
    r = np.array([x.rank if isinstance(x, RankedResult) else x for x in results], dtype=float)
    if r.size == 0:
        raise MetricError("no results to aggregate")
    return r


def recall_at_k(results, k: int) -> float:
    if k < 1:
        raise MetricError("k must be >= 1")
    return float(np.mean(_ranks(results) <= k))


def ndcg_at_k(results, k: int) -> float:
    if k < 1:
        raise MetricError("k must be >= 1")
    r = _ranks(results)
    return float(np.mean(np.where(r <= k, 1.0 / np.log2(r + 1.0), 0.0)))


def mrr(results) -> float:
    return float(np.mean(1.0 / _ranks(results)))


def summarize(results, ks=DEFAULT_KS) -> dict:
    out = {}
    for k in ks:
        out[f"recall@{k}"] = recall_at_k(results, k)
    for k in ks:
        if k > 1:
            out[f"ndcg@{k}"] = ndcg_at_k(results, k)
    out["mrr"] = mrr(results)
    return out


@dataclass
class MetricsReport:
    overall: dict
    buckets: dict
    counts: dict
    seed: int
    fingerprint: str = ""
    tie_rate: float = 0.0
    target: str = "test"
    ks: tuple = DEFAULT_KS
    extra: dict = field(default_factory=dict)

    @property
    def metric_names(self):
        return list(self.overall)

    def to_dict(self):
        return {
            "buckets": self.buckets,
            "counts": self.counts,
            "extra": self.extra,
            "fingerprint": self.fingerprint,
            "overall": self.overall,
            "seed": self.seed,
            "target": self.target,
            "tie_rate": self.tie_rate,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["bucket", "metric", "value", "count"])
        total = sum(self.counts.values())
        for name in self.metric_names:
            w.writerow(["all", name, _fmt(self.overall[name]), total])
        for b in BUCKETS:
            for name in self.metric_names:
                w.writerow([b, name, _fmt(self.buckets[b].get(name)), self.counts[b]])
        return buf.getvalue()


def _fmt(v):
    return "" if v is None else repr(float(v))


def build_report(results, lengths, seed, ks=DEFAULT_KS, fingerprint="", target="test") -> MetricsReport:
    """Aggregate per-user results overall and by original sequence length."""
    groups = {b: [] for b in BUCKETS}
    for r, L in zip(results, lengths):
        groups[bucket_of(L)].append(r)
    names = list(summarize([1], ks))
    buckets = {b: (summarize(g, ks) if g else {m: None for m in names}) for b, g in groups.items()}
    ties = sum(1 for r in results if getattr(r, "tied", False))
    return MetricsReport(summarize(results, ks), buckets, {b: len(g) for b, g in groups.items()},
                         seed, fingerprint, ties / len(results), target, tuple(ks))


def evaluate(params: ModelParams, splits, seed: int, count: int = 100, ks=DEFAULT_KS,
             target: str = "test", histories=None, full_ranking: bool = False,
             popularity=None, fingerprint: str = "", batch_size: int = 256) -> MetricsReport:
    """Rank every user's held-out item among ``count`` sampled negatives.

    ``splits`` is a list of ``(user, SplitSequence)``. The model input is
    ``train + [valid]`` for the test target and ``train`` for the valid
    target, unless ``histories`` overrides it per user (e.g. augmented
    inputs). Users are bucketed by their original full length. With
    ``full_ranking`` every item not in the user's history is a candidate.
    """
    if target not in ("test", "valid"):
        raise ValueError(f"unknown target {target!r}")
    rng = np.random.default_rng(seed)
    n, num_items = params.config.n, params.num_items
    rows, cand_lists, truths, users, lengths = [], [], [], [], []
    for user, sp in splits:
        full = sp.reconstruct()
        if target == "test":
            truth, hist = sp.test, sp.history
        else:
            truth, hist = sp.valid, sp.train
        if histories is not None and user in histories:
            hist = histories[user]
        if full_ranking:
            seen = set(full) - {truth}
            cands = [truth] + [i for i in range(1, num_items + 1) if i not in seen and i != truth]
        else:
            try:
                cands = sample_eval_candidates(full, truth, num_items, rng, count, popularity)
            except SamplingError as exc:
                raise SamplingError(f"user {user}: {exc}") from exc
        rows.append(pad_truncate(hist, n))
        cand_lists.append(cands)
        truths.append(truth)
        users.append(user)
        lengths.append(len(full))
    results = []
    table = params.item_table.data
    for start in range(0, len(rows), batch_size):
        h = last_hidden(np.stack(rows[start:start + batch_size]), params)
        for j, hv in enumerate(h):
            i = start + j
            cands = cand_lists[i]
            scores = table[np.asarray(cands)] @ hv
            rank, tied = rank_of(scores, cands.index(truths[i]))
            results.append(RankedResult(users[i], rank, len(cands), tied))
    return build_report(results, lengths, seed, ks, fingerprint, target)


def average_reports(reports) -> MetricsReport:
    """Seed-average: mean of each metric; counts from the first report."""
    first = reports[0]

    def mean(vals):
        vals = [v for v in vals if v is not None]
        return float(np.mean(vals)) if vals else None

    overall = {m: mean([r.overall[m] for r in reports]) for m in first.overall}
    buckets = {b: {m: mean([r.buckets[b][m] for r in reports]) for m in first.buckets[b]} for b in BUCKETS}
    return MetricsReport(overall, buckets, dict(first.counts), -1, first.fingerprint,
                         float(np.mean([r.tie_rate for r in reports])), first.target, first.ks,
                         {"seeds": [r.seed for r in reports]})


def export_embeddings(params: ModelParams, sample_size: int, seed: int, vocab=None) -> str:
    """TSV rows ``item<TAB>x1<TAB>...<TAB>xd`` for a seeded item sample."""
    if sample_size > params.num_items or sample_size < 0:
        raise SamplingError(f"cannot sample {sample_size} of {params.num_items} items")
    rng = np.random.default_rng(seed)
    picked = np.sort(rng.choice(params.num_items, size=sample_size, replace=False) + 1)
    lines = []
    for i in picked:
        name = vocab.item(int(i)) if vocab is not None else str(int(i))
        vec = params.item_table.data[i]
        lines.append(name + "\t" + "\t".join(repr(float(x)) for x in vec))
    return "".join(line + "\n" for line in lines)
