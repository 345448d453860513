"""Search small corpora over {A,B,C,D} for one matching the reverse-vs-forward counterexample.

Enumerates multisets of four length-3 sequences in lexicographic order and
returns the first whose counts give, for context C and target A:

    three "CA" and one "CD" bigram, P_F(A|C) = 3/4, reverse argmax B with P_R(B|C) = 3/4 (unique),
    P_F(A|BC) = 2/3, forward argmax D with P_F(A|DC) = 1 (unique).

Counting is done here by direct substring scanning, independently of
``bicat.markov_oracle``.

    python scripts/search_counterexample.py [--write PATH]
"""
import argparse
import itertools
from fractions import Fraction

SYMBOLS = "ABCD"


def occurrences(corpus, window):
    k = len(window)
    return sum(1 for s in corpus for i in range(len(s) - k + 1) if s[i:i + k] == window)


def forward(corpus, context, nxt):
    d = occurrences(corpus, context)
    return None if d == 0 else Fraction(occurrences(corpus, context + nxt), d)


def reverse(corpus, anchor, prev):
    d = sum(occurrences(corpus, x + anchor) for x in SYMBOLS)
    return None if d == 0 else Fraction(occurrences(corpus, prev + anchor), d)


def matches(corpus):
    # three "CA" and one "CD"
    if occurrences(corpus, "CA") != 3 or occurrences(corpus, "CD") != 1:
        return False
    if forward(corpus, "C", "A") != Fraction(3, 4):
        return False
    rev = {x: reverse(corpus, "C", x) for x in SYMBOLS}
    if rev["B"] != Fraction(3, 4) or any(v is not None and v >= rev["B"] for x, v in rev.items() if x != "B"):
        return False
    if forward(corpus, "BC", "A") != Fraction(2, 3):
        return False
    fwd = {x: forward(corpus, x + "C", "A") for x in SYMBOLS}
    if fwd["D"] != 1:
        return False
    return all(v is None or v < 1 for x, v in fwd.items() if x != "D")


def search(length=3, count=4):
    words = ["".join(w) for w in itertools.product(SYMBOLS, repeat=length)]
    for corpus in itertools.combinations_with_replacement(words, count):
        if matches(corpus):
            return list(corpus)
    return None


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--write", help="write the corpus (one spaced sequence per line)")
    args = ap.parse_args()
    found = search()
    if found is None:
        raise SystemExit("no corpus found")
    text = "".join(" ".join(s) + "\n" for s in found)
    print(text, end="")
    if args.write:
        with open(args.write, "w") as fh:
            fh.write(text)


if __name__ == "__main__":
    main()
