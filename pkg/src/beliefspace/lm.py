"""Language-model contract consumed by every search and training module.

A model exposes next-token log-probabilities over a fixed vocabulary; the
base class derives teacher-forced sequence scoring and greedy completion
from that single primitive so all implementations share one semantics.
Batched :class:`DecodingSession` objects exist so implementations with an
incremental fast path (key/value caching) can accelerate beam search and
lookahead rollouts without changing results.
"""

from __future__ import annotations

from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import ContextTooLong
from .tokens import TokenSequence, Vocabulary

NEG_INF = float("-inf")


def as_ids(seq: "TokenSequence | Sequence[int]") -> tuple[int, ...]:
    if isinstance(seq, TokenSequence):
        return seq.ids
    return tuple(int(t) for t in seq)


@dataclass(frozen=True)
class WeightedExample:
    """A training example with a signed weight.

    Loss is computed on ``target`` tokens only; ``context`` never receives
    gradient.  Weight -1 turns the update into gradient ascent on this
    example's negative log-likelihood.
    """

    context: TokenSequence
    target: TokenSequence
    weight: float

    def __post_init__(self):
        if len(self.target) == 0:
            raise ValueError("WeightedExample target must be non-empty")
        if not np.isfinite(self.weight) or self.weight == 0.0:
            raise ValueError("WeightedExample weight must be finite and nonzero")


class LanguageModel(ABC):
    """Scored autoregressive sequence model over a fixed vocabulary."""

    vocab: Vocabulary
    seed: int = 0

    @property
    @abstractmethod
    def max_context_tokens(self) -> int:
        """Maximum number of conditioning tokens (excluding BOS)."""

    @abstractmethod
    def next_token_logprobs(self, context: "TokenSequence | Sequence[int]") -> np.ndarray:
        """Natural-log next-token distribution given ``context``.

        The exponentials of the returned vector sum to 1 within 1e-6.
        Raises ContextTooLong if the context exceeds the position budget.
        """

    def _check_length(self, n: int):
        if n > self.max_context_tokens:
            raise ContextTooLong(
                f"context of {n} tokens exceeds limit {self.max_context_tokens}"
            )

    def sequence_logprob(
        self,
        context: "TokenSequence | Sequence[int]",
        continuation: "TokenSequence | Sequence[int]",
    ) -> float:
        """Teacher-forced log-probability of ``continuation`` after ``context``.

        Equals the sum of stepwise next-token log-probabilities; the empty
        continuation scores 0.0.
        """
        ctx = list(as_ids(context))
        cont = as_ids(continuation)
        self._check_length(len(ctx) + len(cont))
        total = 0.0
        for tok in cont:
            lp = self.next_token_logprobs(ctx)[tok]
            if lp == NEG_INF:
                return NEG_INF
            total += float(lp)
            ctx.append(tok)
        return total

    def greedy_complete(
        self,
        context: "TokenSequence | Sequence[int]",
        stop_tokens: Iterable[int],
        max_len: int,
    ) -> tuple[list[int], bool]:
        """Greedy argmax decoding until a stop token or ``max_len``.

        Ties break toward the lowest token id.  The stop token is not part
        of the output.  Returns ``(tokens, truncated)`` where ``truncated``
        is True when the budget (or the position limit) ended generation.
        """
        if max_len < 1:
            raise ValueError("max_len must be >= 1")
        ctx = list(as_ids(context))
        self._check_length(len(ctx))
        stops = set(int(s) for s in stop_tokens)
        out: list[int] = []
        while len(out) < max_len:
            if len(ctx) + 1 > self.max_context_tokens:
                return out, True
            lp = self.next_token_logprobs(ctx)
            tok = int(np.argmax(lp))  # np.argmax returns the first (lowest) index on ties
            if tok in stops:
                return out, False
            out.append(tok)
            ctx.append(tok)
        return out, True

    def start_session(self, contexts: np.ndarray) -> "DecodingSession":
        """Open a batched incremental-decoding session.

        ``contexts`` is an int array of shape (B, T); all rows share one
        length.  The default session replays ``next_token_logprobs`` per
        row and is exact but slow; fast implementations override this.
        """
        return _ReplaySession(self, contexts)


class DecodingSession(ABC):
    """Batched incremental decoder over equal-length per-row contexts."""

    @property
    @abstractmethod
    def batch_size(self) -> int: ...

    @abstractmethod
    def next_logprobs(self) -> np.ndarray:
        """(B, V) log-distribution for the next position of every row."""

    @abstractmethod
    def append(self, tokens: np.ndarray) -> None:
        """Advance every row by one token; ``tokens`` has shape (B,)."""

    @abstractmethod
    def score_chunk(self, chunk: np.ndarray) -> np.ndarray:
        """Teacher-force a (B, K) chunk; returns (B, K) per-token logprobs.

        Rows advance by K tokens.
        """

    @abstractmethod
    def select(self, rows: np.ndarray) -> None:
        """Reorder/duplicate rows (beam bookkeeping); ``rows`` indexes B."""


class _ReplaySession(DecodingSession):
    """Reference session: per-row replay through next_token_logprobs."""

    def __init__(self, model: LanguageModel, contexts: np.ndarray):
        contexts = np.asarray(contexts, dtype=np.int64)
        if contexts.ndim != 2:
            raise ValueError("contexts must have shape (B, T)")
        self._model = model
        self._rows: list[list[int]] = [list(map(int, row)) for row in contexts]

    @property
    def batch_size(self) -> int:
        return len(self._rows)

    def next_logprobs(self) -> np.ndarray:
        return np.stack([self._model.next_token_logprobs(r) for r in self._rows])

    def append(self, tokens: np.ndarray) -> None:
        for row, tok in zip(self._rows, np.asarray(tokens).reshape(-1)):
            row.append(int(tok))

    def score_chunk(self, chunk: np.ndarray) -> np.ndarray:
        chunk = np.asarray(chunk, dtype=np.int64)
        out = np.empty(chunk.shape, dtype=np.float64)
        for k in range(chunk.shape[1]):
            lps = self.next_logprobs()
            out[:, k] = lps[np.arange(len(self._rows)), chunk[:, k]]
            self.append(chunk[:, k])
        return out

    def select(self, rows: np.ndarray) -> None:
        self._rows = [list(self._rows[int(i)]) for i in np.asarray(rows).reshape(-1)]


class TrainableLanguageModel(LanguageModel):
    """A language model with trainable parameters and a signed-weight loss."""

    @abstractmethod
    def snapshot(self) -> "TrainableLanguageModel":
        """Deep copy; training the copy never touches the original."""

    @abstractmethod
    def parameter_names(self) -> list[str]:
        """Fixed, documented flattening order for gradients/checkpoints."""

    @abstractmethod
    def train_step(
        self,
        batch: Sequence[WeightedExample],
        learning_rate: float,
        opt: "object | None" = None,
    ) -> tuple[float, list[float]]:
        """One adaptive-moment update minimizing mean(weight_i * NLL_i).

        NLL is summed over target tokens (context masked).  Returns the
        scalar objective and the unweighted per-example NLLs.  Raises
        NonFiniteLoss (without updating) if any loss is non-finite.
        ``opt`` carries Adam moments across steps; None means fresh moments.
        """
