"""Flat experiment configuration files."""
from dataclasses import replace
from pathlib import Path

import pytest
from hypothesis import given
from hypothesis import strategies as st

from bicat.config import ExperimentConfig, load, override, parse, serialize
from bicat.errors import ConfigError

CONFIGS = Path(__file__).resolve().parents[1] / "configs"
text_values = st.text(st.one_of(st.sampled_from("# =\\\t,"), st.characters(blacklist_categories=("Cs",))),
                      max_size=20)


class TestRoundTrip:
    def test_defaults(self):
        cfg = ExperimentConfig()
        assert parse(serialize(cfg)) == cfg

    @given(seed=st.integers(0, 2 ** 31), d=st.sampled_from([8, 16, 32]), lam=st.floats(0, 5),
           alpha=st.floats(0, 5), K=st.integers(0, 30), M=st.integers(1, 60), out=text_values,
           interactions=text_values, seeds=st.lists(st.integers(0, 99), min_size=1, max_size=5),
           header=st.booleans())
    def test_random_values(self, seed, d, lam, alpha, K, M, out, interactions, seeds, header):
        cfg = ExperimentConfig()
        cfg = replace(cfg, run=replace(cfg.run, seed=seed, out=out),
                      data=replace(cfg.data, interactions=interactions, header=header),
                      encoder=replace(cfg.encoder, d=d, heads=2),
                      pretrain=replace(cfg.pretrain, lam=lam), augment=replace(cfg.augment, K=K, M=M),
                      finetune=replace(cfg.finetune, alpha=alpha), eval=replace(cfg.eval, seeds=tuple(seeds)))
        assert parse(serialize(cfg)) == cfg

    @pytest.mark.parametrize("value", ["a#b", " edge ", "\\t", "x = y", ""])
    def test_awkward_strings(self, value):
        cfg = override(ExperimentConfig(), out=value)
        assert parse(serialize(cfg)).run.out == value

    @pytest.mark.parametrize("name", ["beauty.conf", "phones.conf", "synthetic.conf"])
    def test_shipped_files(self, name):
        cfg = load(CONFIGS / name)
        assert parse(serialize(cfg)) == cfg


class TestShippedOptima:
    @pytest.mark.parametrize("name,expected", [
        ("beauty.conf", dict(n=100, d=128, layers=2, heads=4, dropout=0.7, lam=0.4, M=18, K=15, alpha=1.0,
                             clip_k=8)),
        ("phones.conf", dict(n=100, d=32, layers=2, heads=2, dropout=0.5, lam=0.3, M=18, K=17, alpha=0.2,
                             clip_k=8)),
    ])
    def test_values(self, name, expected):
        cfg = load(CONFIGS / name)
        got = dict(n=cfg.encoder.n, d=cfg.encoder.d, layers=cfg.encoder.layers, heads=cfg.encoder.heads,
                   dropout=cfg.encoder.dropout, lam=cfg.pretrain.lam, M=cfg.augment.M, K=cfg.augment.K,
                   alpha=cfg.finetune.alpha, clip_k=cfg.finetune.clip_k)
        assert got == expected
        assert cfg.augment.strategy == "bicat" and cfg.eval.seeds == tuple(range(10))


class TestParse:
    def test_comments_and_blank_lines(self):
        cfg = parse("# note\n\nrun.seed = 7  # trailing\n")
        assert cfg.run.seed == 7

    def test_tuple_and_bool(self):
        cfg = parse("eval.seeds = 3, 4\ndata.header = yes\n")
        assert cfg.eval.seeds == (3, 4) and cfg.data.header is True

    @pytest.mark.parametrize("text", ["run.seed 3", "seed = 3", "bogus.key = 1", "run.nope = 1",
                                      "run.seed = x", "data.header = maybe", "pretrain.seed = 3",
                                      "augment.M = 0", "encoder.heads = 3", "eval.sampling = zipf"])
    def test_errors(self, text):
        with pytest.raises(ConfigError):
            parse(text)

    def test_escapes(self):
        cfg = parse("data.delimiter = \\t\n")
        assert cfg.data.delimiter == "\t"
        assert "data.delimiter = \\t" in serialize(cfg)


class TestFingerprint:
    def test_ignores_output_directory(self):
        a = ExperimentConfig()
        assert a.fingerprint() == override(a, out="elsewhere").fingerprint()

    def test_sensitive_to_settings(self):
        a = ExperimentConfig()
        assert a.fingerprint() != override(a, seed=1).fingerprint()
        assert a.fingerprint() != a.with_values(finetune__alpha=0.3).fingerprint()


class TestOverride:
    def test_flags(self):
        cfg = override(ExperimentConfig(), seed=5, out="o", strategy="mask", rt=True)
        assert (cfg.run.seed, cfg.run.out, cfg.augment.strategy, cfg.finetune.rt) == (5, "o", "mask", True)

    def test_none_keeps_values(self):
        cfg = ExperimentConfig()
        assert override(cfg) == cfg
