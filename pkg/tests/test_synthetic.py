"""Synthetic Markov corpora and in-memory pipelines."""
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from bicat.augment import AugmentConfig
from bicat.corpus import parse_interactions
from bicat.encoder import EncoderConfig
from bicat.experiment import STAGES, effective_configs, run_pipeline, stage_seed
from bicat.finetune import FinetuneConfig
from bicat.pretrain import PretrainConfig
from bicat.synthetic import ChainSpec, MarkovChain, as_interactions, generate_sequences, skewed_lengths

ROOT = Path(__file__).resolve().parents[1]


class TestChain:
    def test_rows_are_distributions(self):
        chain = MarkovChain()
        assert np.allclose(chain.transitions.sum(axis=1), 1.0)
        assert (np.diag(chain.transitions) == 0).all()
        assert ((chain.transitions > 0).sum(axis=1) == 3).all()

    def test_items_belong_to_states(self):
        chain = MarkovChain()
        for s in range(20):
            for k in range(15):
                assert chain.state_of(chain.item(s, k)) == s

    def test_state_path_follows_transitions(self):
        chain = MarkovChain()
        path = chain.sample_states(500, np.random.default_rng(0))
        assert all(chain.transitions[a, b] > 0 for a, b in zip(path, path[1:]))

    def test_fixed_chain(self):
        a, b = MarkovChain(), MarkovChain(ChainSpec())
        assert (a.transitions == b.transitions).all()


class TestCorpus:
    def test_shape(self):
        chain, seqs = generate_sequences(2000, seed=0)
        lengths = [len(s) for s in seqs]
        assert len(seqs) == 2000 and min(lengths) >= 2 and max(lengths) <= 30
        assert np.median(lengths) < 8  # skewed short
        assert all(1 <= x <= chain.spec.num_items for s in seqs for x in s)

    def test_seeded(self):
        assert generate_sequences(50, seed=4)[1] == generate_sequences(50, seed=4)[1]
        assert generate_sequences(50, seed=4)[1] != generate_sequences(50, seed=5)[1]

    def test_lengths_bounded(self):
        lengths = skewed_lengths(5000, np.random.default_rng(1), lo=2, hi=30)
        assert min(lengths) == 2 and max(lengths) <= 30

    def test_interactions_round_trip(self):
        _, seqs = generate_sequences(5, seed=0)
        rows = [f"{i.user},{i.item},1,{i.timestamp}" for i in as_interactions(seqs)]
        log = parse_interactions(rows)
        assert len(log.interactions) == sum(map(len, seqs)) and log.malformed_count == 0

    def test_script(self, tmp_path):
        out = tmp_path / "s.csv"
        subprocess.run([sys.executable, str(ROOT / "scripts/make_synthetic.py"), str(out), "--count", "30"],
                       check=True, capture_output=True)
        assert len(parse_interactions(out.read_text().splitlines()).interactions) > 30


class TestExperiment:
    def test_stage_seeds_distinct(self):
        seeds = {stage_seed(0, s) for s in STAGES}
        assert len(seeds) == len(STAGES)
        assert stage_seed(3, "pretrain") == stage_seed(3, "pretrain") != stage_seed(4, "pretrain")

    @pytest.mark.parametrize("strategy,lam,alpha", [("bicat", 0.4, 0.5), ("reverse_only", 0.0, 0.0),
                                                    ("none", 0.4, 0.0), ("crop", 0.4, 0.0)])
    def test_effective_configs(self, strategy, lam, alpha):
        pt, ft = effective_configs(strategy, PretrainConfig(lam=0.4), FinetuneConfig(alpha=0.5))
        assert (pt.lam, ft.alpha) == (lam, alpha)

    def test_pipeline_runs_and_is_deterministic(self):
        chain, seqs = generate_sequences(80, seed=1, hi=12)
        seqs = [s for s in seqs if len(s) >= 3]
        args = (seqs, chain.spec.num_items, "bicat", EncoderConfig(n=12, d=8, heads=2, layers=1, dropout=0.1),
                PretrainConfig(epochs=2), AugmentConfig(K=2, M=5), FinetuneConfig(epochs=2, clip_k=1))
        a, b = run_pipeline(*args, seed=2), run_pipeline(*args, seed=2)
        assert a.report.to_json() == b.report.to_json()
        assert a.generated > 0 and len(a.pretrain_trace) == 2 and len(a.finetune_trace) == 2
