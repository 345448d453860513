"""In-memory end-to-end pipelines: pretrain, augment, finetune, evaluate."""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .augment import BASELINES, GENERATIVE, AugmentConfig, augment_corpus, generate_batch
from .corpus import leave_one_out
from .encoder import EncoderConfig, ModelParams
from .evaluation import evaluate
from .finetune import FinetuneConfig, run_finetune
from .pretrain import PretrainConfig, run_pretrain

STAGES = ("prepare", "pretrain", "augment", "finetune", "evaluate", "init")


def stage_seed(seed: int, stage: str) -> int:
    """Per-stage sub-seed: first word of ``SeedSequence([seed, stage_index])``."""
    return int(np.random.SeedSequence([seed, STAGES.index(stage)]).generate_state(1)[0])


@dataclass
class PipelineResult:
    strategy: str
    seed: int
    report: object
    pretrain_trace: list = field(default_factory=list)
    finetune_trace: list = field(default_factory=list)
    generated: int = 0
    params: object = None


def effective_configs(strategy, pretrain: PretrainConfig, finetune: FinetuneConfig):
    """Adjust stage configs for a strategy.

    ``reverse_only`` forces lambda = 0 and alpha = 0 (reverse pre-training
    and generation only). SASRec-backbone strategies (``none`` and the
    random baselines) skip KL since they have no generated prefix to
    distil across.
    """
    if strategy == "reverse_only":
        pretrain = replace(pretrain, lam=0.0)
    if strategy in ("none", "reverse_only") or strategy in BASELINES:
        finetune = replace(finetune, alpha=0.0)
    return pretrain, finetune


def run_pipeline(sequences, num_items, strategy, encoder: EncoderConfig, pretrain: PretrainConfig,
                 augment: AugmentConfig, finetune: FinetuneConfig, seed: int = 0,
                 eval_seed: int | None = None, log=None, keep_params=False) -> PipelineResult:
    """Run one strategy on chronological item lists and evaluate on the test items.

    Generation-based strategies pre-train, augment the training prefixes and
    fine-tune from the pre-trained weights (or from scratch with
    ``finetune.rt``). Other strategies train a fresh encoder on the
    original or randomly perturbed training prefixes.
    """
    pretrain, finetune = effective_configs(strategy, pretrain, finetune)
    pretrain = replace(pretrain, seed=stage_seed(seed, "pretrain"))
    augment = replace(augment, strategy=strategy, seed=stage_seed(seed, "augment"))
    finetune = replace(finetune, seed=stage_seed(seed, "finetune"))
    splits = [(u, leave_one_out(s)) for u, s in enumerate(sequences, 1)]
    train = [(u, sp.train) for u, sp in splits]
    params = ModelParams.init(encoder, num_items, seed=stage_seed(seed, "init"))
    pt_trace = []
    model = None
    if strategy in GENERATIVE:
        params, pt_trace = run_pretrain([s for _, s in train], params, pretrain, log)
        model = params
    corpus = augment_corpus(train, model if strategy in GENERATIVE else params, augment)
    histories = None
    if strategy in GENERATIVE and augment.augment_eval:
        hist = [sp.history for _, sp in splits]
        gens = generate_batch(hist, model, augment.K, augment.M)
        histories = {u: tuple(g) + tuple(h) for (u, _), g, h in zip(splits, gens, hist)}
    if finetune.rt or strategy not in GENERATIVE:
        params = ModelParams.init(encoder, num_items, seed=stage_seed(seed, "init"))
    else:
        params = model.copy()
    params, ft_trace = run_finetune(corpus.pairs(), params, finetune, log)
    es = stage_seed(seed, "evaluate") if eval_seed is None else eval_seed
    report = evaluate(params, splits, es, histories=histories)
    return PipelineResult(strategy, seed, report, pt_trace, ft_trace, corpus.total_generated(),
                          params if keep_params else None)
