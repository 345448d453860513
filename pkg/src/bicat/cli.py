"""Command-line entry point: ``bicat {prepare,pretrain,augment,finetune,evaluate,oracle}``.

Every stage reads its inputs from and writes its outputs under ``--out``::

    prepare/   sequences.tsv vocab.tsv length_histogram.csv manifest.json
    pretrain/  model.ckpt loss.csv manifest.json
    augment/   augmented.tsv manifest.json
    finetune/  model.ckpt loss.csv manifest.json
    evaluate/  report_seed<S>.{json,csv} report_mean.{json,csv} manifest.json
    oracle/    counterexample.json

PNG figures are rendered next to the CSVs. Manifests record the config
fingerprint, seeds and content digests of every input and output (not
paths or times), so reruns with the same config produce identical bytes.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import config as cfgmod
from . import plotting
from .augment import GENERATIVE, STRATEGIES, augment_corpus, format_augmented, \
    generate_batch, parse_augmented
from .corpus import CsvSpec, build_sequences, format_sequences, format_vocab, leave_one_out, \
    length_histogram, parse_interactions, parse_sequences, parse_vocab
from .encoder import ModelParams, load_checkpoint, save_checkpoint
from .errors import BicatError, CompatibilityError, EmptyCorpusError, StageOrderError, UsageError
from .evaluation import average_reports, evaluate, export_embeddings
from .experiment import effective_configs, stage_seed
from .finetune import run_finetune
from .io_utils import atomic_write_bytes, atomic_write_text, digest_bytes
from .markov_oracle import NgramCounts, counterexample_report, fixture_text, format_table, \
    parse_symbol_corpus, report_to_json
from .pretrain import run_pretrain

MANIFEST_VERSION = 1


# -- helpers -------------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _log(msg):
    print(msg, file=sys.stderr)


def _require(path: Path) -> Path:
    if not path.exists():
        raise StageOrderError(f"missing prerequisite artifact {path}")
    return path


class Stage:
    """Collects digests of a stage's inputs and outputs for its manifest."""

    def __init__(self, name, cfg, out: Path):
        self.name = name
        self.cfg = cfg
        self.root = out
        self.dir = out / name
        self.inputs = {}
        self.outputs = {}

    def read(self, rel) -> bytes:
        data = _require(self.root / rel).read_bytes()
        self.inputs[rel] = digest_bytes(data)
        return data

    def write(self, filename, data):
        if isinstance(data, str):
            data = data.encode("utf-8")
        atomic_write_bytes(self.dir / filename, data)
        self.outputs[f"{self.name}/{filename}"] = digest_bytes(data)

    def finish(self, **extra):
        manifest = {
            "version": MANIFEST_VERSION,
            "stage": self.name,
            "config": self.cfg.fingerprint(),
            "seed": self.cfg.run.seed,
            "stage_seed": stage_seed(self.cfg.run.seed, self.name),
            "inputs": self.inputs,
            "outputs": self.outputs,
            **extra,
        }
        text = json.dumps(manifest, sort_keys=True, indent=2) + "\n"
        atomic_write_text(self.dir / "manifest.json", text)
        return manifest


def _trace_csv(trace) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    keys = list(trace[0]) if trace else ["epoch"]
    w.writerow(keys)
    for row in trace:
        w.writerow([row[k] if k == "epoch" else repr(float(row[k])) for k in keys])
    return buf.getvalue()


def _load_corpus(stage: Stage):
    seqs = parse_sequences(stage.read("prepare/sequences.tsv").decode("utf-8"))
    vocab = parse_vocab(stage.read("prepare/vocab.tsv").decode("utf-8"))
    if not seqs:
        raise EmptyCorpusError("prepared corpus holds no sequences")
    return seqs, vocab


def _load_model(stage: Stage, rel, cfg, num_items) -> ModelParams:
    params, _ = load_checkpoint(stage.read(rel))
    if params.num_items != num_items:
        raise CompatibilityError(f"{rel}: checkpoint has {params.num_items} items, corpus has {num_items}")
    if params.config != cfg.encoder:
        raise CompatibilityError(f"{rel}: checkpoint encoder {params.config} differs from config {cfg.encoder}")
    return params


def _upstream(out: Path, stage) -> dict:
    path = _require(out / stage / "manifest.json")
    return json.loads(path.read_text(encoding="utf-8"))


def _stage_configs(cfg):
    strategy = cfg.augment.strategy
    pt, ft = effective_configs(strategy, cfg.pretrain, cfg.finetune)
    seed = cfg.run.seed
    return (replace(pt, seed=stage_seed(seed, "pretrain")),
            replace(cfg.augment, seed=stage_seed(seed, "augment")),
            replace(ft, seed=stage_seed(seed, "finetune")))


# -- commands ------------------------------------------------------------------

def cmd_prepare(cfg, out: Path, input_path=None):
    path = input_path or cfg.data.interactions
    if not path:
        raise UsageError("no interaction file: pass --input or set data.interactions")
    stage = Stage("prepare", cfg, out)
    raw = Path(path).read_bytes()
    stage.inputs["interactions"] = digest_bytes(raw)
    spec = CsvSpec(columns=tuple(cfg.data.columns), delimiter=cfg.data.delimiter, header=cfg.data.header)
    log = parse_interactions(raw.decode("utf-8").splitlines(), spec)
    for lineno in log.malformed:
        _log(f"skipped malformed line {lineno}")
    vocab, seqs = build_sequences(log.interactions, cfg.data.min_len)
    if not seqs:
        raise EmptyCorpusError(f"empty corpus: no user has at least {cfg.data.min_len} interactions")
    hist = length_histogram(s.items for s in seqs)
    stage.write("sequences.tsv", format_sequences(seqs))
    stage.write("vocab.tsv", format_vocab(vocab))
    stage.write("length_histogram.csv",
                "length,users\n" + "".join(f"{L},{hist[L]}\n" for L in sorted(hist)))
    plotting.plot_length_histogram(hist, stage.dir / "length_histogram.png")
    interactions = sum(len(s.items) for s in seqs)
    print(f"users {len(seqs)}  items {len(vocab)}  interactions {interactions}  "
          f"malformed {log.malformed_count}")
    print("length  users")
    for L in sorted(hist):
        print(f"{L:6d}  {hist[L]}")
    return stage.finish(users=len(seqs), items=len(vocab))


def cmd_pretrain(cfg, out: Path):
    stage = Stage("pretrain", cfg, out)
    seqs, vocab = _load_corpus(stage)
    pt, _, _ = _stage_configs(cfg)
    params = ModelParams.init(cfg.encoder, len(vocab), seed=stage_seed(cfg.run.seed, "init"))
    trace = []
    trained = cfg.augment.strategy in GENERATIVE
    if trained:
        train = [leave_one_out(s).train for s in seqs]

        def snapshot(epoch, p):
            if pt.checkpoint_every and epoch % pt.checkpoint_every == 0 and epoch < pt.epochs:
                stage.write(f"model_epoch{epoch}.ckpt", save_checkpoint(p))

        params, trace = run_pretrain(train, params, pt, _log, snapshot)
    else:
        _log(f"strategy {cfg.augment.strategy}: no pre-training, writing the initial weights")
    stage.write("model.ckpt", save_checkpoint(params))
    stage.write("loss.csv", _trace_csv(trace))
    plotting.plot_loss_trace(trace, stage.dir / "loss.png", "pre-training loss")
    return stage.finish(strategy=cfg.augment.strategy, trained=trained)


def cmd_augment(cfg, out: Path):
    stage = Stage("augment", cfg, out)
    seqs, vocab = _load_corpus(stage)
    _, ag, _ = _stage_configs(cfg)
    params = _load_model(stage, "pretrain/model.ckpt", cfg, len(vocab))
    if ag.strategy in GENERATIVE and not _upstream(out, "pretrain").get("trained"):
        raise StageOrderError(f"strategy {ag.strategy} needs a pre-trained model; rerun pretrain "
                              f"with --strategy {ag.strategy}")
    train = [(s.user, leave_one_out(s).train) for s in seqs]
    corpus = augment_corpus(train, params, ag)
    stage.write("augmented.tsv", format_augmented(corpus))
    if ag.strategy in GENERATIVE and ag.augment_eval:
        hist = [leave_one_out(s).history for s in seqs]
        gens = generate_batch(hist, params, ag.K, ag.M)
        stage.write("eval_histories.tsv", "".join(
            f"{s.user}\t{len(g)}\t{' '.join(map(str, tuple(g) + tuple(h)))}\n"
            for s, g, h in zip(seqs, gens, hist)))
    changed = sum(e.augmented != e.original for e in corpus.entries)
    print(f"strategy {ag.strategy}: {changed} of {len(corpus.entries)} sequences changed, "
          f"{corpus.total_generated()} items generated")
    return stage.finish(strategy=ag.strategy, generated=corpus.total_generated())


def cmd_finetune(cfg, out: Path):
    stage = Stage("finetune", cfg, out)
    seqs, vocab = _load_corpus(stage)
    _, _, ft = _stage_configs(cfg)
    corpus = parse_augmented(stage.read("augment/augmented.tsv").decode("utf-8"))
    strategy = cfg.augment.strategy
    if _upstream(out, "augment").get("strategy") != strategy:
        raise StageOrderError(f"augment/augmented.tsv was not produced with strategy {strategy}; "
                              "rerun augment")
    if strategy in GENERATIVE and not ft.rt:
        params = _load_model(stage, "pretrain/model.ckpt", cfg, len(vocab))
    else:
        params = ModelParams.init(cfg.encoder, len(vocab), seed=stage_seed(cfg.run.seed, "init"))
    best = {"epoch": 0, "recall@5": -1.0, "state": None}
    splits = [(s.user, leave_one_out(s)) for s in seqs]

    def keep_best(epoch, p):
        score = evaluate(p, splits, stage_seed(cfg.run.seed, "finetune"), count=cfg.eval.negatives,
                         ks=(5,), target="valid").overall["recall@5"]
        _log(f"finetune epoch {epoch}: validation recall@5={score:.4f}")
        if score > best["recall@5"]:
            best.update({"epoch": epoch, "recall@5": score, "state": save_checkpoint(p)})

    params, trace = run_finetune(corpus.pairs(), params, ft, _log, keep_best if ft.select_best else None)
    ckpt = best["state"] if best["state"] is not None else save_checkpoint(params)
    stage.write("model.ckpt", ckpt)
    stage.write("loss.csv", _trace_csv(trace))
    plotting.plot_loss_trace(trace, stage.dir / "loss.png", "fine-tuning loss")
    extra = {"best_epoch": best["epoch"]} if ft.select_best else {}
    return stage.finish(strategy=strategy, rt=ft.rt, **extra)


def cmd_evaluate(cfg, out: Path, checkpoint=None):
    stage = Stage("evaluate", cfg, out)
    seqs, vocab = _load_corpus(stage)
    if checkpoint is None:
        params = _load_model(stage, "finetune/model.ckpt", cfg, len(vocab))
    else:
        data = Path(checkpoint).read_bytes()
        stage.inputs["checkpoint"] = digest_bytes(data)
        params, _ = load_checkpoint(data)
        if params.num_items != len(vocab) or params.config != cfg.encoder:
            raise CompatibilityError(f"{checkpoint}: checkpoint ({params.num_items} items, "
                                     f"{params.config}) does not match corpus/config")
    splits = [(s.user, leave_one_out(s)) for s in seqs]
    histories = None
    if (out / "augment" / "eval_histories.tsv").exists() and cfg.augment.augment_eval:
        aug = parse_augmented(stage.read("augment/eval_histories.tsv").decode("utf-8"))
        histories = {e.user: e.augmented for e in aug.entries}
    popularity = None
    if cfg.eval.sampling == "popularity":
        popularity = np.bincount(np.concatenate([sp.train for _, sp in splits]).astype(np.int64),
                                 minlength=len(vocab) + 1).astype(float)
    reports = []
    for s in cfg.eval.seeds:
        r = evaluate(params, splits, stage_seed(s, "evaluate"), count=cfg.eval.negatives,
                     ks=cfg.eval.ks, target=cfg.eval.target, histories=histories,
                     full_ranking=cfg.eval.full_ranking, popularity=popularity,
                     fingerprint=cfg.fingerprint())
        r.seed = s
        reports.append(r)
        stage.write(f"report_seed{s}.json", r.to_json())
        stage.write(f"report_seed{s}.csv", r.to_csv())
    mean = average_reports(reports)
    stage.write("report_mean.json", mean.to_json())
    stage.write("report_mean.csv", mean.to_csv())
    plotting.plot_bucket_metrics(mean, stage.dir / "buckets.png")
    if cfg.eval.export_sample:
        stage.write("embeddings.tsv", export_embeddings(params, cfg.eval.export_sample,
                                                        stage_seed(cfg.run.seed, "evaluate"), vocab))
    print(f"{len(reports)} seed(s), {len(splits)} users")
    for name, v in mean.overall.items():
        print(f"{name:10s} {v:.4f}")
    return stage.finish(seeds=list(cfg.eval.seeds))


def cmd_oracle(corpus_path=None, out: Path | None = None):
    if corpus_path is None:
        text = fixture_text()
    else:
        text = Path(corpus_path).read_text(encoding="utf-8")
    report = counterexample_report(NgramCounts(parse_symbol_corpus(text)))
    print(format_table(report), end="")
    js = report_to_json(report)
    if out is not None:
        atomic_write_text(out / "oracle" / "counterexample.json", js)
    return report


# -- entry point -----------------------------------------------------------------

def build_parser():
    p = _Parser(prog="bicat", description="Bidirectional chronological augmentation for "
                                          "sequential recommendation.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in ("prepare", "pretrain", "augment", "finetune", "evaluate", "oracle"):
        sp = sub.add_parser(name)
        sp.add_argument("--config", help="flat key = value config file")
        sp.add_argument("--seed", type=int, help="overrides run.seed")
        sp.add_argument("--out", help="output directory (overrides run.out)")
        sp.add_argument("--strategy", choices=STRATEGIES, help="overrides augment.strategy")
        sp.add_argument("--rt", action="store_true", help="fine-tune from scratch instead of "
                                                          "from the pre-trained weights")
        if name in ("prepare", "oracle"):
            sp.add_argument("--input", help="raw interaction file (prepare) or symbol corpus "
                                            "(oracle; defaults to the shipped fixture)")
        if name == "evaluate":
            sp.add_argument("--checkpoint", help="model to evaluate (default finetune/model.ckpt)")
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        cfg = cfgmod.load(args.config) if args.config else cfgmod.ExperimentConfig()
        cfg = cfgmod.override(cfg, seed=args.seed, out=args.out, strategy=args.strategy, rt=args.rt)
        out = Path(cfg.run.out)
        if args.command == "prepare":
            cmd_prepare(cfg, out, args.input)
        elif args.command == "pretrain":
            cmd_pretrain(cfg, out)
        elif args.command == "augment":
            cmd_augment(cfg, out)
        elif args.command == "finetune":
            cmd_finetune(cfg, out)
        elif args.command == "evaluate":
            cmd_evaluate(cfg, out, args.checkpoint)
        else:
            cmd_oracle(args.input, out if args.out else None)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except (BicatError, OSError, UnicodeDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
