"""Corpus pretraining for the reference model."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .lm import WeightedExample
from .tokens import EMPTY_SEQUENCE, Vocabulary
from .transformer import ModelConfig, TinyTransformerLM


@dataclass(frozen=True)
class PretrainConfig:
    steps: int = 6000
    batch_size: int = 16
    learning_rate: float = 1e-3
    final_lr_fraction: float = 0.1
    seed: int = 0
    d_model: int = 64
    n_heads: int = 2
    d_ff: int = 128
    n_layers: int = 2
    max_positions: int = 96

    def arch(self, vocab_size: int) -> ModelConfig:
        return ModelConfig(
            vocab_size=vocab_size,
            d_model=self.d_model,
            n_heads=self.n_heads,
            d_ff=self.d_ff,
            n_layers=self.n_layers,
            max_positions=self.max_positions,
        )


def _bucketed_batches(
    lengths: list[int], batch_size: int, rng: np.random.Generator
) -> list[list[int]]:
    """One epoch of batches; rows within a batch share a document length."""
    groups: dict[int, list[int]] = {}
    for i, n in enumerate(lengths):
        groups.setdefault(n, []).append(i)
    batches: list[list[int]] = []
    for n in sorted(groups):
        idx = groups[n]
        order = rng.permutation(len(idx))
        shuffled = [idx[j] for j in order]
        batches.extend(
            shuffled[k : k + batch_size] for k in range(0, len(shuffled), batch_size)
        )
    batch_order = rng.permutation(len(batches))
    return [batches[j] for j in batch_order]


def pretrain(
    vocab: Vocabulary,
    corpus_lines: list[str],
    config: PretrainConfig,
    log_every: int = 0,
) -> TinyTransformerLM:
    """Train a fresh model on the corpus with plain next-token loss.

    Documents are batched by equal token length and the model sees every
    document once per epoch, cycling until ``steps`` updates have run.
    Fully deterministic under the config seed.
    """
    model = TinyTransformerLM(vocab, config.arch(len(vocab)), seed=config.seed)
    docs = [vocab.seq_from_ids(vocab.encode(d) + [vocab.eos_id]) for d in corpus_lines]
    lengths = [len(d) for d in docs]
    rng = np.random.default_rng(config.seed)
    opt = model.init_optimizer()
    queue: list[list[int]] = []
    base, floor = config.learning_rate, config.learning_rate * config.final_lr_fraction
    for step in range(config.steps):
        if not queue:
            queue = _bucketed_batches(lengths, config.batch_size, rng)
        take = queue.pop(0)
        batch = [WeightedExample(EMPTY_SEQUENCE, docs[i], 1.0) for i in take]
        # cosine decay keeps late training from bouncing around the minimum
        frac = step / max(1, config.steps - 1)
        lr = floor + 0.5 * (base - floor) * (1.0 + np.cos(np.pi * frac))
        objective, _ = model.train_step(batch, lr, opt)
        if log_every and (step % log_every == 0 or step == config.steps - 1):
            print(f"[pretrain] step {step}: objective {objective:.4f}")
    return model
