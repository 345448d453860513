"""Write a synthetic Markov-chain interaction log as ``user,item,rating,timestamp`` CSV.

Usage: python scripts/make_synthetic.py OUT.csv [--count 2000] [--seed 0]
"""
import argparse
from pathlib import Path

from bicat.io_utils import atomic_write_text
from bicat.synthetic import as_interactions, generate_sequences


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("out")
    p.add_argument("--count", type=int, default=2000)
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args()
    _, seqs = generate_sequences(args.count, seed=args.seed)
    rows = as_interactions(seqs)
    text = "".join(f"{r.user},{r.item},1,{int(r.timestamp)}\n" for r in rows)
    atomic_write_text(Path(args.out), text)
    print(f"{len(seqs)} users, {len(rows)} interactions -> {args.out}")


if __name__ == "__main__":
    main()
