"""Exact n-gram counts and forward/reverse conditional probabilities.

Everything here is computed with :class:`fractions.Fraction`; there is
no floating point anywhere in the module.
"""
from __future__ import annotations

import json
from collections import Counter
from importlib import resources
from dataclasses import dataclass
from fractions import Fraction

from .errors import UndefinedConditionalError


class NgramCounts:
    """Occurrence counts of every contiguous window up to ``max_order``.

    Overlapping windows are each counted once per starting position.
    """

    def __init__(self, sequences, max_order: int = 3):
        if max_order < 1:
            raise ValueError("max_order must be >= 1")
        self.max_order = max_order
        self.sequences = [tuple(s) for s in sequences]
        self._counts = Counter()
        for s in self.sequences:
            for order in range(1, max_order + 1):
                for i in range(len(s) - order + 1):
                    self._counts[s[i:i + order]] += 1
        self.symbols = sorted({x for s in self.sequences for x in s})

    def count(self, window) -> int:
        window = tuple(window)
        if len(window) > self.max_order:
            raise ValueError(f"window of length {len(window)} exceeds max_order={self.max_order}")
        return self._counts.get(window, 0)

    def windows(self, order: int):
        return {w: c for w, c in self._counts.items() if len(w) == order}


def forward_conditional(counts: NgramCounts, context, nxt) -> Fraction:
    """``count(context + [next]) / count(context)``."""
    context = tuple(context)
    denom = counts.count(context)
    if denom == 0:
        raise UndefinedConditionalError(f"context {context!r} never occurs")
    return Fraction(counts.count(context + (nxt,)), denom)


def reverse_conditional(counts: NgramCounts, anchor, prev) -> Fraction:
    """Share of the non-initial occurrences of ``anchor`` preceded by ``prev``."""
    denom = sum(c for (a, b), c in counts.windows(2).items() if b == anchor)
    if denom == 0:
        raise UndefinedConditionalError(f"{anchor!r} never has a predecessor")
    return Fraction(counts.count((prev, anchor)), denom)


@dataclass(frozen=True)
class Choice:
    symbol: object
    probability: Fraction
    ties: tuple = ()  # other symbols reaching the same probability


def _argmax(scored) -> Choice:
    best = max(p for _, p in scored)
    winners = sorted(s for s, p in scored if p == best)
    return Choice(winners[0], best, tuple(winners[1:]))


def best_reverse_augment(counts: NgramCounts, seq) -> Choice:
    """Symbol most likely to precede ``seq[0]``; ties go to the smallest symbol."""
    head = tuple(seq)[0]
    scored = [(s, reverse_conditional(counts, head, s)) for s in counts.symbols]
    return _argmax(scored)


def best_forward_augment(counts: NgramCounts, seq, target) -> Choice:
    """Prefix symbol maximising ``P_F(target | [candidate] + seq)``.

    Candidates whose extended context never occurs are skipped.
    """
    seq = tuple(seq)
    scored = []
    for s in counts.symbols:
        try:
            scored.append((s, forward_conditional(counts, (s,) + seq, target)))
        except UndefinedConditionalError:
            continue
    if not scored:
        raise UndefinedConditionalError(f"no prefix of {seq!r} gives a defined conditional")
    return _argmax(scored)


@dataclass(frozen=True)
class BayesCheck:
    p_a_given_b: Fraction
    p_b_given_a: Fraction
    p_a: Fraction
    p_b: Fraction
    residual: Fraction


def bayes_identity_check(counts: NgramCounts, a, b) -> BayesCheck:
    """Check ``P(A|B) = P(B|A) P(A) / P(B)`` on the adjacent-pair event space.

    An event is an adjacent pair ``(x, y)``. ``A`` means "first slot is a",
    ``B`` means "second slot is b"; ``P(A|B)`` is the reverse correlation and
    ``P(B|A)`` the forward one.
    """
    pairs = counts.windows(2)
    total = sum(pairs.values())
    n_a = sum(c for (x, _), c in pairs.items() if x == a)
    n_b = sum(c for (_, y), c in pairs.items() if y == b)
    if total == 0 or n_b == 0:
        raise UndefinedConditionalError(f"P({b!r}) is zero on the pair space")
    n_ab = pairs.get((a, b), 0)
    p_a, p_b = Fraction(n_a, total), Fraction(n_b, total)
    p_a_given_b = Fraction(n_ab, n_b)
    p_b_given_a = Fraction(n_ab, n_a) if n_a else Fraction(0)
    residual = abs(p_a_given_b - p_b_given_a * p_a / p_b)
    return BayesCheck(p_a_given_b, p_b_given_a, p_a, p_b, residual)


def counterexample_report(counts: NgramCounts, context=("C",), target="A") -> dict:
    """Forward probability before and after reverse- vs forward-chosen prefixes."""
    context = tuple(context)
    base = forward_conditional(counts, context, target)
    rev = best_reverse_augment(counts, context)
    after_rev = forward_conditional(counts, (rev.symbol,) + context, target)
    fwd = best_forward_augment(counts, context, target)
    return {
        "context": list(context),
        "target": target,
        "p_forward": base,
        "reverse_choice": rev.symbol,
        "p_reverse_choice": rev.probability,
        "reverse_ties": list(rev.ties),
        "p_forward_after_reverse": after_rev,
        "forward_choice": fwd.symbol,
        "forward_ties": list(fwd.ties),
        "p_forward_after_forward": fwd.probability,
        "reverse_degrades_forward": after_rev < base,
    }


def report_to_json(report: dict) -> str:
    def enc(v):
        if isinstance(v, Fraction):
            return f"{v.numerator}/{v.denominator}"
        raise TypeError(type(v))

    return json.dumps(report, default=enc, sort_keys=True, indent=2) + "\n"


def parse_symbol_corpus(text: str):
    return [line.split() for line in text.splitlines() if line.strip()]


def fixture_text() -> str:
    """The shipped four-sequence counterexample corpus (search-reconstructed)."""
    return resources.files("bicat").joinpath("data/fig4_corpus.txt").read_text(encoding="utf-8")


def report_schema() -> dict:
    """JSON Schema for :func:`report_to_json` output."""
    return json.loads(resources.files("bicat").joinpath("data/counterexample.schema.json")
                      .read_text(encoding="utf-8"))


def format_table(report: dict) -> str:
    ctx = "".join(report["context"])
    tgt = report["target"]
    r, f = report["reverse_choice"], report["forward_choice"]
    rows = [
        (f"P_F({tgt}|{ctx})", report["p_forward"]),
        (f"reverse choice ({r}), P_R({r}|{ctx[0]})", report["p_reverse_choice"]),
        (f"P_F({tgt}|{r}{ctx})", report["p_forward_after_reverse"]),
        (f"forward choice ({f}), P_F({tgt}|{f}{ctx})", report["p_forward_after_forward"]),
        ("reverse choice degrades forward", report["reverse_degrades_forward"]),
    ]
    width = max(len(k) for k, _ in rows)
    return "\n".join(f"{k.ljust(width)}  {v}" for k, v in rows) + "\n"
