"""Belief-space rectification: suppress spurious targets, enhance true ones.

Training minimizes ``mean_i(weight_i * NLL_i)`` where suppress examples
carry weight -1 (gradient ascent on their likelihood) and enhance
examples carry weight +beta.  Targets span the belief plus the answer
suffix; the prefix prompt is context and never receives gradient.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .attribution import AttributionScore, EvidenceDoc
from .data import QAInstance, render_prompt
from .elicitation import Belief, PromptTemplate, build_query
from .errors import EmptyPool, MissingBeliefs, NonFiniteLoss
from .lm import TrainableLanguageModel, WeightedExample
from .tokens import EMPTY_SEQUENCE


@dataclass(frozen=True)
class RectificationPair:
    """One misanswered instance with its elicited belief sets."""

    instance: QAInstance
    y_inc: str
    y_cor: str
    spurious: tuple[Belief, ...]
    true_beliefs: tuple[Belief, ...]

    def __post_init__(self):
        if self.y_inc == self.y_cor:
            raise ValueError(f"instance {self.instance.id}: y_inc equals y_cor")


@dataclass(frozen=True)
class UnlearnConfig:
    beta: float = 0.5
    learning_rate: float = 5e-5
    batch_size: int = 8
    epochs: int = 1
    top_k_beliefs: int = 1
    seed: int = 0
    # collapse guards; the suppress ceiling is nats per target token
    suppress_nll_ceiling: float = 20.0
    guard_drop_points: float = 10.0

    def __post_init__(self):
        if self.beta < 0:
            raise ValueError("beta must be non-negative")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.batch_size < 1 or self.epochs < 0 or self.top_k_beliefs < 1:
            raise ValueError("invalid unlearn config")


@dataclass
class StepRecord:
    step: int
    suppress_nll: float | None
    enhance_nll: float | None
    objective: float


@dataclass
class TrainingLog:
    steps: list[StepRecord] = field(default_factory=list)
    aborted: str | None = None

    def write(self, path) -> None:
        with open(path, "w", encoding="utf-8") as f:
            for r in self.steps:
                f.write(
                    json.dumps(
                        {
                            "step": r.step,
                            "suppress_nll": r.suppress_nll,
                            "enhance_nll": r.enhance_nll,
                            "objective": r.objective,
                        },
                        sort_keys=True,
                    )
                    + "\n"
                )
            if self.aborted:
                f.write(json.dumps({"aborted": self.aborted}) + "\n")


def _top_beliefs(beliefs: Sequence[Belief], k: int) -> list[Belief]:
    ranked = sorted(beliefs, key=lambda b: (-b.combined, b.tokens.ids))
    return ranked[:k]


def _equalize(
    suppress: list[WeightedExample],
    enhance: list[WeightedExample],
    rng: np.random.Generator,
) -> tuple[list[WeightedExample], list[WeightedExample]]:
    n = min(len(suppress), len(enhance))
    if len(suppress) > n:
        keep = sorted(rng.choice(len(suppress), size=n, replace=False).tolist())
        suppress = [suppress[i] for i in keep]
    if len(enhance) > n:
        keep = sorted(rng.choice(len(enhance), size=n, replace=False).tolist())
        enhance = [enhance[i] for i in keep]
    return suppress, enhance


def _into_batches(
    suppress: list[WeightedExample],
    enhance: list[WeightedExample],
    config: UnlearnConfig,
    rng: np.random.Generator,
) -> list[list[WeightedExample]]:
    examples = suppress + enhance
    order = rng.permutation(len(examples))
    shuffled = [examples[i] for i in order]
    return [
        shuffled[i : i + config.batch_size]
        for i in range(0, len(shuffled), config.batch_size)
    ]


def build_unlearn_batches(
    pairs: Sequence[RectificationPair],
    template: PromptTemplate,
    config: UnlearnConfig,
    model: TrainableLanguageModel,
) -> list[list[WeightedExample]]:
    """Belief-space batches: targets are belief ++ answer-suffix.

    Per pair, the ``top_k_beliefs`` best beliefs by combined score feed
    each side.  Suppress and enhance counts are equalized (random
    truncation of the larger side under the run seed) before a zero beta
    drops the enhance side entirely.
    """
    rng = np.random.default_rng(config.seed)
    suppress: list[WeightedExample] = []
    enhance: list[WeightedExample] = []
    for pair in pairs:
        if not pair.spurious or not pair.true_beliefs:
            raise MissingBeliefs(
                f"instance {pair.instance.id} lacks beliefs on one side"
            )
        prompt = render_prompt(pair.instance)
        q_inc = build_query(prompt, pair.y_inc, template, model)
        q_cor = build_query(prompt, pair.y_cor, template, model)
        for b in _top_beliefs(pair.spurious, config.top_k_beliefs):
            suppress.append(WeightedExample(q_inc.x_pre, b.tokens + q_inc.y_suf, -1.0))
        for b in _top_beliefs(pair.true_beliefs, config.top_k_beliefs):
            enhance.append(WeightedExample(q_cor.x_pre, b.tokens + q_cor.y_suf, config.beta))
    suppress, enhance = _equalize(suppress, enhance, rng)
    if config.beta == 0.0:
        enhance = []
        suppress = [WeightedExample(ex.context, ex.target, -1.0) for ex in suppress]
    return _into_batches(suppress, enhance, config, rng)


def answer_sr_sets(
    pairs: Sequence[RectificationPair],
    template: PromptTemplate,
    config: UnlearnConfig,
    model: TrainableLanguageModel,
) -> list[list[WeightedExample]]:
    """Answer-space batches: targets are the answer suffix alone."""
    rng = np.random.default_rng(config.seed)
    suppress: list[WeightedExample] = []
    enhance: list[WeightedExample] = []
    for pair in pairs:
        prompt = render_prompt(pair.instance)
        q_inc = build_query(prompt, pair.y_inc, template, model)
        q_cor = build_query(prompt, pair.y_cor, template, model)
        suppress.append(WeightedExample(q_inc.x_pre, q_inc.y_suf, -1.0))
        if config.beta > 0.0:
            enhance.append(WeightedExample(q_cor.x_pre, q_cor.y_suf, config.beta))
    return _into_batches(suppress, enhance, config, rng)


def knowledge_sr_sets(
    pairs: Sequence[RectificationPair],
    evidence_pool: Sequence[EvidenceDoc],
    tda_scores: dict[str, list[AttributionScore]],
    config: UnlearnConfig,
    model: TrainableLanguageModel,
) -> list[list[WeightedExample]]:
    """Knowledge-space batches over attributed training documents.

    Suppress side: the pool documents most influential for (x, y_inc).
    Enhance side: the instance's own evidence documents.  Counts equalize
    by truncation; a document may appear on both sides with opposite
    signs.
    """
    if not evidence_pool:
        raise EmptyPool("evidence pool is empty")
    by_id = {d.id: d for d in evidence_pool}
    rng = np.random.default_rng(config.seed)
    suppress: list[WeightedExample] = []
    enhance: list[WeightedExample] = []
    for pair in pairs:
        scores = tda_scores.get(pair.instance.id)
        if not scores:
            raise EmptyPool(f"no attribution scores for instance {pair.instance.id}")
        if not pair.instance.evidence:
            raise EmptyPool(f"instance {pair.instance.id} has no evidence documents")
        sup_docs = [by_id[s.doc_id] for s in scores[: config.top_k_beliefs]]
        enh_texts = list(pair.instance.evidence)
        n = min(len(sup_docs), len(enh_texts))
        for doc in sup_docs[:n]:
            suppress.append(
                WeightedExample(EMPTY_SEQUENCE, model.vocab.seq(doc.text), -1.0)
            )
        if config.beta > 0.0:
            for text in enh_texts[:n]:
                enhance.append(
                    WeightedExample(EMPTY_SEQUENCE, model.vocab.seq(text), config.beta)
                )
    return _into_batches(suppress, enhance, config, rng)


def _side_mean_nll(batch: Sequence[WeightedExample], nlls: Sequence[float], side: str) -> float | None:
    if side == "suppress":
        vals = [nll for ex, nll in zip(batch, nlls) if ex.weight < 0]
    else:
        vals = [nll for ex, nll in zip(batch, nlls) if ex.weight > 0]
    return float(np.mean(vals)) if vals else None


def rectify(
    model: TrainableLanguageModel,
    pairs: Sequence[RectificationPair],
    template: PromptTemplate,
    config: UnlearnConfig,
    guard_accuracy: Callable[[TrainableLanguageModel], float] | None = None,
) -> tuple[TrainableLanguageModel, TrainingLog]:
    """Belief-space rectification over elicited pairs.

    Builds suppress/enhance batches from the pairs' beliefs and trains a
    snapshot; see :func:`rectify_batches` for the training loop contract.
    """
    if not pairs:
        raise ValueError("pairs must be non-empty")
    batches = build_unlearn_batches(pairs, template, config, model)
    return rectify_batches(model, batches, config, guard_accuracy)


def rectify_batches(
    model: TrainableLanguageModel,
    batches: Sequence[Sequence[WeightedExample]],
    config: UnlearnConfig,
    guard_accuracy: Callable[[TrainableLanguageModel], float] | None = None,
) -> tuple[TrainableLanguageModel, TrainingLog]:
    """Run the unlearning epochs over prebuilt batches.

    The input model is never mutated; optimizer moments start fresh.  The
    run aborts (with the log noting why) if a loss turns non-finite, if
    the suppress side exceeds the per-token NLL ceiling (the model is
    collapsing), or if ``guard_accuracy`` drops too far below its
    starting value between epochs.
    """
    rect = model.snapshot()
    log = TrainingLog()
    if config.epochs == 0 or not batches:
        return rect, log
    opt = rect.init_optimizer()
    guard_start = guard_accuracy(rect) if guard_accuracy is not None else None
    step = 0
    for _epoch in range(config.epochs):
        for batch in batches:
            step += 1
            try:
                objective, nlls = rect.train_step(batch, config.learning_rate, opt)
            except NonFiniteLoss as exc:
                log.aborted = f"non-finite loss at step {step}: {exc}"
                return rect, log
            sup = _side_mean_nll(batch, nlls, "suppress")
            enh = _side_mean_nll(batch, nlls, "enhance")
            log.steps.append(StepRecord(step, sup, enh, objective))
            sup_tokens = [
                nll / len(ex.target)
                for ex, nll in zip(batch, nlls)
                if ex.weight < 0
            ]
            if sup_tokens and float(np.mean(sup_tokens)) > config.suppress_nll_ceiling:
                log.aborted = f"suppress NLL ceiling exceeded at step {step}"
                return rect, log
        if guard_accuracy is not None:
            acc = guard_accuracy(rect)
            if (guard_start - acc) * 100.0 > config.guard_drop_points:
                log.aborted = f"guard accuracy dropped after step {step}"
                return rect, log
    return rect, log
