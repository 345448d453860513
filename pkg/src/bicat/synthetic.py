"""Synthetic sequential-recommendation corpora driven by a Markov chain.

A first-order chain over ``num_states`` latent states moves users between
states; every state owns a disjoint pool of items and emits one of them
(Zipf-weighted) at each step. Item indices start at 1.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .corpus import Interaction


@dataclass(frozen=True)
class ChainSpec:
    num_states: int = 20
    items_per_state: int = 15
    successors: int = 3
    zipf: float = 1.0
    chain_seed: int = 7

    @property
    def num_items(self):
        return self.num_states * self.items_per_state


class MarkovChain:
    def __init__(self, spec: ChainSpec = ChainSpec()):
        self.spec = spec
        rng = np.random.default_rng(spec.chain_seed)
        S = spec.num_states
        T = np.zeros((S, S))
        weights = 1.0 / np.arange(1, spec.successors + 1) ** 1.5
        weights /= weights.sum()
        for s in range(S):
            nxt = rng.choice([t for t in range(S) if t != s], size=spec.successors, replace=False)
            T[s, nxt] = weights
        self.transitions = T
        self.start = np.full(S, 1.0 / S)
        e = 1.0 / np.arange(1, spec.items_per_state + 1) ** spec.zipf
        self.emission = e / e.sum()

    def item(self, state, slot):
        return state * self.spec.items_per_state + slot + 1

    def state_of(self, item):
        return (item - 1) // self.spec.items_per_state

    def sample_states(self, length, rng):
        s = int(rng.choice(self.spec.num_states, p=self.start))
        out = [s]
        for _ in range(length - 1):
            s = int(rng.choice(self.spec.num_states, p=self.transitions[s]))
            out.append(s)
        return out

    def sample_items(self, length, rng):
        states = self.sample_states(length, rng)
        slots = rng.choice(self.spec.items_per_state, size=length, p=self.emission)
        return [self.item(s, int(k)) for s, k in zip(states, slots)]


def skewed_lengths(count, rng, lo=2, hi=30, p=0.2):
    """Geometric lengths starting at ``lo``, resampled until ``<= hi``."""
    out = []
    while len(out) < count:
        L = lo + int(rng.geometric(p)) - 1
        if L <= hi:
            out.append(L)
    return out


def generate_sequences(count=2000, seed=0, spec: ChainSpec = ChainSpec(), lo=2, hi=30, p=0.2):
    chain = MarkovChain(spec)
    rng = np.random.default_rng(seed)
    return chain, [chain.sample_items(L, rng) for L in skewed_lengths(count, rng, lo, hi, p)]


def as_interactions(sequences):
    """Timestamped interaction records (one second apart) for the sequences."""
    out = []
    for u, seq in enumerate(sequences, 1):
        for t, item in enumerate(seq):
            out.append(Interaction(f"u{u}", f"i{item}", 1_000_000 + t))
    return out
