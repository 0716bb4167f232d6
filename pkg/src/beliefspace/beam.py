"""Length-normalization-free beam search over a language model.

One fixed contract, shared by the forward-only belief generator and by
answer decoding:

* every step expands each alive hypothesis to its ``width`` most probable
  next tokens (ties toward the lowest token id), then keeps the global
  top ``width`` candidates by cumulative log-probability, ties broken by
  lexicographic token order;
* a candidate whose new token is a stop token finishes; its recorded
  tokens exclude the stop token, its ranking score includes the stop
  token's log-probability, and ``prefix_logprob`` excludes it;
* at ``max_len`` every surviving candidate finishes as truncated;
* finished hypotheses are returned sorted by score, ties lexicographic.

Zero-length completions are discarded unless ``allow_empty`` is set.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .lm import LanguageModel, as_ids


@dataclass(frozen=True)
class ScoredSequence:
    """A finished beam hypothesis."""

    tokens: tuple[int, ...]
    score: float
    prefix_logprob: float
    finished_by_stop: bool


def beam_search(
    model: LanguageModel,
    context: Sequence[int],
    width: int,
    stop_tokens: Iterable[int],
    max_len: int,
    allow_empty: bool = False,
) -> list[ScoredSequence]:
    if width < 1:
        raise ValueError("width must be >= 1")
    ctx = as_ids(context)
    stops = set(int(s) for s in stop_tokens)
    if max_len < 1:
        return []

    session = model.start_session(np.array([ctx], dtype=np.int64))
    alive: list[tuple[tuple[int, ...], float]] = [((), 0.0)]  # session row i == alive[i]
    finished: list[ScoredSequence] = []

    for step in range(1, max_len + 1):
        lps = session.next_logprobs()
        vocab_ids = np.arange(lps.shape[1])
        candidates = []  # (tokens, score, parent index, new token)
        for i, (tokens, score) in enumerate(alive):
            order = np.lexsort((vocab_ids, -lps[i]))[:width]
            for v in order:
                v = int(v)
                candidates.append((tokens + (v,), score + float(lps[i, v]), i, v))
        if not allow_empty:
            candidates = [c for c in candidates if not (c[3] in stops and len(c[0]) == 1)]
        candidates.sort(key=lambda c: (-c[1], c[0]))
        kept = candidates[:width]

        next_alive: list[tuple[tuple[int, ...], float]] = []
        parent_rows: list[int] = []
        new_tokens: list[int] = []
        for tokens, score, parent, v in kept:
            if v in stops:
                finished.append(
                    ScoredSequence(tokens[:-1], score, alive[parent][1], True)
                )
            elif step == max_len:
                finished.append(ScoredSequence(tokens, score, score, False))
            else:
                next_alive.append((tokens, score))
                parent_rows.append(parent)
                new_tokens.append(v)
        if not next_alive:
            break
        session.select(np.array(parent_rows, dtype=np.int64))
        session.append(np.array(new_tokens, dtype=np.int64))
        alive = next_alive

    finished.sort(key=lambda f: (-f.score, f.tokens))
    return finished
