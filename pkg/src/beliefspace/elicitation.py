"""Belief elicitation: blank-filling prompts and the four generators.

The model is asked to fill the blank in

    ``{INPUT} The concise fact to solve the problem is that _____.
    Therefore, the answer is {OUTPUT}.``

The text before the blank (with the question substituted) is the prefix
prompt; the text after it (with an answer substituted) is the answer
suffix.  A filled blank is a *belief*: a statement the model treats as
true when connecting the question to that answer.

Four generators produce ranked beliefs:

* ``fbbs``   - beam search whose per-step score blends the cumulative
  forward log-probability of the partial belief with a lookahead estimate
  of the suffix log-probability, under the sigmoid schedule ``lambda``;
* ``fbs``    - plain forward beam search (no lookahead);
* ``bbs``    - the fbbs machinery ranking by the lookahead score alone;
* ``posthoc``- greedy explanation generated after the fact from a prompt
  that already shows the answer.

Conventions, fixed here and relied on by tests:

* the belief terminator is the first period; the period itself belongs to
  the suffix, so a belief's tokens and forward score never include it;
* the estimated total length of a belief is its completed length in
  tokens, excluding the terminator; a lookahead that exhausts its budget
  without finding the terminator reports NEG_INF and a budget-capped
  length estimate;
* the schedule position is clamped to ``min(t, T_est)`` so a hypothesis
  finishing exactly at the terminator evaluates the schedule at its end;
* zero-length completions are discarded; completions with a NEG_INF
  combined score are dropped from the returned pool;
* returned beliefs are sorted by combined score, ties broken by
  lexicographic token order.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np

from .beam import beam_search
from .errors import EmptyBeliefSpace, EmptyField, PlaceholderMissing
from .lm import NEG_INF, LanguageModel
from .tokens import TokenSequence

DEFAULT_TEMPLATE_TEXT = (
    "{INPUT} The concise fact to solve the problem is that _____. "
    "Therefore, the answer is {OUTPUT}."
)

_BLANK_RE = re.compile(r"_{3,}")


class Generator(str, Enum):
    FBBS = "fbbs"
    FBS = "fbs"
    BBS = "bbs"
    POSTHOC = "posthoc"


@dataclass(frozen=True)
class PromptTemplate:
    """Blank-filling template split at the blank marker."""

    prefix_pattern: str
    suffix_pattern: str

    def __post_init__(self):
        if self.prefix_pattern.count("{INPUT}") != 1:
            raise PlaceholderMissing("prefix pattern needs exactly one {INPUT}")
        if self.suffix_pattern.count("{OUTPUT}") != 1:
            raise PlaceholderMissing("suffix pattern needs exactly one {OUTPUT}")

    @classmethod
    def from_text(cls, text: str) -> "PromptTemplate":
        parts = _BLANK_RE.split(text.strip())
        if len(parts) != 2:
            raise PlaceholderMissing("template must contain exactly one blank (___)")
        return cls(parts[0].rstrip(), parts[1].lstrip())

    @classmethod
    def from_file(cls, path) -> "PromptTemplate":
        return cls.from_text(Path(path).read_text(encoding="utf-8"))

    def render(self, question: str, answer: str) -> tuple[str, str]:
        return (
            self.prefix_pattern.replace("{INPUT}", question).strip(),
            self.suffix_pattern.replace("{OUTPUT}", answer).strip(),
        )


DEFAULT_TEMPLATE = PromptTemplate.from_text(DEFAULT_TEMPLATE_TEXT)


@dataclass(frozen=True)
class ElicitationQuery:
    """Tokenized prefix prompt and answer suffix for one (x, y) pair."""

    x_pre: TokenSequence
    y_suf: TokenSequence

    def __post_init__(self):
        if len(self.x_pre) == 0 or len(self.y_suf) == 0:
            raise EmptyField("elicitation query parts must be non-empty")


@dataclass(frozen=True)
class FBBSConfig:
    """Search hyperparameters; defaults follow the shipped experiment setup."""

    alpha: float = 0.3
    beam_n: int = 8
    candidate_m: int = 4
    max_belief_len: int = 12
    lookahead_budget: int = 12
    terminator: str = "."

    def __post_init__(self):
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")
        if self.beam_n < 1:
            raise ValueError("beam_n must be >= 1")
        if not (1 <= self.candidate_m):
            raise ValueError("candidate_m must be >= 1")
        if self.max_belief_len < 0:
            raise ValueError("max_belief_len must be >= 0")
        if self.lookahead_budget < 1:
            raise ValueError("lookahead_budget must be >= 1")


@dataclass(frozen=True)
class BeamHypothesis:
    """A frontier element of the lookahead beam."""

    tokens: tuple[int, ...]
    fwd_logprob: float
    back_logprob: float
    est_total_len: int
    combined: float


@dataclass(frozen=True)
class Belief:
    """A completed blank fill with its scores."""

    tokens: TokenSequence
    text: str
    fwd_logprob: float
    back_logprob: float
    combined: float
    generator: Generator


def build_query(
    question: str,
    answer: str,
    template: PromptTemplate,
    model: LanguageModel,
) -> ElicitationQuery:
    """Substitute question/answer into the template and tokenize both parts."""
    if not question.strip() or not answer.strip():
        raise EmptyField("question and answer must be non-empty")
    x_pre_text, y_suf_text = template.render(question, answer)
    return ElicitationQuery(model.vocab.seq(x_pre_text), model.vocab.seq(y_suf_text))


def lambda_weight(t: int, t_hat: int, alpha: float) -> float:
    """Sigmoid schedule shifting weight from forward to backward score.

    Returns ``1 / (1 + exp(alpha * (2t / t_hat - 1)))``.
    """
    if t < 1 or t_hat < 1:
        raise ValueError("t and t_hat must be >= 1")
    if t > t_hat:
        raise ValueError("t must not exceed t_hat")
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    return 1.0 / (1.0 + math.exp(alpha * (2.0 * t / t_hat - 1.0)))


def combined_score(fwd: float, back: float, t: int, t_hat: int, alpha: float) -> float:
    """Schedule-weighted blend of forward and backward scores."""
    if fwd == NEG_INF or back == NEG_INF:
        return NEG_INF
    lam = lambda_weight(t, t_hat, alpha)
    return lam * fwd + (1.0 - lam) * back


def _terminator_id(model: LanguageModel, config: FBBSConfig) -> int:
    tid = model.vocab.id_of(config.terminator)
    if tid == model.vocab.unk_id and config.terminator != model.vocab.word(tid):
        raise ValueError(f"terminator {config.terminator!r} not in vocabulary")
    return tid


def _score_suffix_grouped(
    model: LanguageModel,
    contexts: list[tuple[int, ...]],
    y_suf: tuple[int, ...],
) -> list[float]:
    """Teacher-forced suffix scores for contexts of possibly mixed lengths.

    Rows sharing a length are scored in one batched session.
    """
    out = [0.0] * len(contexts)
    by_len: dict[int, list[int]] = {}
    for i, ctx in enumerate(contexts):
        by_len.setdefault(len(ctx), []).append(i)
    for _, rows in sorted(by_len.items()):
        ctx_arr = np.array([contexts[i] for i in rows], dtype=np.int64)
        sess = model.start_session(ctx_arr)
        chunk = np.tile(np.array(y_suf, dtype=np.int64), (len(rows), 1))
        scores = sess.score_chunk(chunk).sum(axis=1)
        for i, s in zip(rows, scores):
            out[i] = float(s)
    return out


def _batched_lookahead(
    model: LanguageModel,
    x_pre: tuple[int, ...],
    partials: list[tuple[int, ...]],
    candidates: list[int],
    y_suf: tuple[int, ...],
    terminator: int,
    budget: int,
) -> list[tuple[float, int]]:
    """Greedy rollout plus suffix scoring for equal-length candidates.

    Returns ``(back_logprob, est_total_len)`` per candidate, where the
    length estimate counts partial + candidate + rollout tokens and the
    rollout stops at the terminator or after ``budget`` tokens (the
    budget-exhausted case reports NEG_INF).
    """
    n = len(candidates)
    contexts = np.array(
        [x_pre + partials[i] + (candidates[i],) for i in range(n)], dtype=np.int64
    )
    sess = model.start_session(contexts)
    done = np.zeros(n, dtype=bool)
    rollouts: list[list[int]] = [[] for _ in range(n)]
    # budget bounds rollout tokens; one extra probe lets a terminator found
    # right after the budget-th token still count as a completion.
    for k in range(budget + 1):
        lps = sess.next_logprobs()
        nxt = lps.argmax(axis=1)
        done |= (~done) & (nxt == terminator)
        if done.all() or k == budget:
            break
        for i in range(n):
            if not done[i]:
                rollouts[i].append(int(nxt[i]))
        sess.append(nxt)

    results: list[tuple[float, int]] = [(NEG_INF, 0)] * n
    to_score: list[int] = []
    score_ctx: list[tuple[int, ...]] = []
    for i in range(n):
        if done[i]:
            to_score.append(i)
            score_ctx.append(x_pre + partials[i] + (candidates[i],) + tuple(rollouts[i]))
        else:
            results[i] = (NEG_INF, len(partials[i]) + 1 + budget)
    if to_score:
        backs = _score_suffix_grouped(model, score_ctx, y_suf)
        for i, back in zip(to_score, backs):
            est = len(partials[i]) + 1 + len(rollouts[i])
            results[i] = (back, est)
    return results


def lookahead_backward(
    model: LanguageModel,
    query: ElicitationQuery,
    partial: TokenSequence,
    candidate: int,
    config: FBBSConfig,
) -> tuple[float, int]:
    """Single-candidate lookahead; see :func:`_batched_lookahead`."""
    if len(partial) + 1 > config.max_belief_len:
        raise ValueError("partial plus candidate exceeds max_belief_len")
    [(back, est)] = _batched_lookahead(
        model,
        query.x_pre.ids,
        [partial.ids],
        [int(candidate)],
        query.y_suf.ids,
        _terminator_id(model, config),
        config.lookahead_budget,
    )
    return back, est


def _lookahead_beam(
    model: LanguageModel,
    query: ElicitationQuery,
    config: FBBSConfig,
    generator: Generator,
) -> list[Belief]:
    """Shared engine for fbbs (blended score) and bbs (backward-only)."""
    x_pre = query.x_pre.ids
    y_suf = query.y_suf.ids
    term = _terminator_id(model, config)
    m = config.candidate_m

    def rank_score(fwd: float, back: float, t: int, est: int) -> float:
        if generator is Generator.BBS:
            return back
        return combined_score(fwd, back, min(t, est), est, config.alpha)

    frontier = [BeamHypothesis((), 0.0, NEG_INF, 0, 0.0)]
    completed: list[tuple[float, tuple[int, ...], float, float, int]] = []

    for t in range(1, config.max_belief_len + 1):
        ctx = np.array([x_pre + h.tokens for h in frontier], dtype=np.int64)
        lps = model.start_session(ctx).next_logprobs()
        vocab_ids = np.arange(lps.shape[1])

        # candidate tuples: (hyp index, token, new cumulative fwd)
        step: list[tuple[int, int, float]] = []
        for i, h in enumerate(frontier):
            order = np.lexsort((vocab_ids, -lps[i]))[: config.beam_n]
            for v in order:
                step.append((i, int(v), h.fwd_logprob + float(lps[i, v])))

        term_cands = [c for c in step if c[1] == term and len(frontier[c[0]].tokens) > 0]
        cont_cands = [c for c in step if c[1] != term]

        scored: list[tuple[float, tuple[int, ...], float, float, int, bool]] = []
        # hypotheses finishing at the terminator: the belief is the partial
        # itself; the suffix score conditions on it directly.
        if term_cands:
            ctxs = [x_pre + frontier[i].tokens for i, _, _ in term_cands]
            backs = _score_suffix_grouped(model, ctxs, y_suf)
            for (i, _, _), back in zip(term_cands, backs):
                h = frontier[i]
                est = len(h.tokens)
                scored.append(
                    (rank_score(h.fwd_logprob, back, t, est), h.tokens, h.fwd_logprob, back, est, True)
                )
        if cont_cands:
            at_max = t == config.max_belief_len
            if at_max:
                ctxs = [x_pre + frontier[i].tokens + (v,) for i, v, _ in cont_cands]
                backs = _score_suffix_grouped(model, ctxs, y_suf)
                looks = [(back, t) for back in backs]
            else:
                looks = _batched_lookahead(
                    model,
                    x_pre,
                    [frontier[i].tokens for i, _, _ in cont_cands],
                    [v for _, v, _ in cont_cands],
                    y_suf,
                    term,
                    config.lookahead_budget,
                )
            for (i, v, fwd), (back, est) in zip(cont_cands, looks):
                tokens = frontier[i].tokens + (v,)
                scored.append(
                    (rank_score(fwd, back, t, est), tokens, fwd, back, est, at_max)
                )

        scored.sort(key=lambda s: (-s[0], s[1]))
        kept = scored[:m]
        frontier = [
            BeamHypothesis(tokens, fwd, back, est, score)
            for (score, tokens, fwd, back, est, final) in kept
            if not final
        ]
        completed.extend(
            (score, tokens, fwd, back, est)
            for (score, tokens, fwd, back, est, final) in kept
            if final
        )
        if not frontier:
            break

    pool = [c for c in completed if c[0] != NEG_INF]
    if not pool:
        raise EmptyBeliefSpace(f"no belief completed for query {query.x_pre.text!r}")
    pool.sort(key=lambda c: (-c[0], c[1]))
    out = []
    for score, tokens, fwd, back, _est in pool[:m]:
        seq = model.vocab.seq_from_ids(tokens)
        out.append(Belief(seq, seq.text, fwd, back, score, generator))
    return out


def fbbs_search(
    model: LanguageModel, query: ElicitationQuery, config: FBBSConfig
) -> list[Belief]:
    """Lookahead beam search blending forward and backward scores."""
    return _lookahead_beam(model, query, config, Generator.FBBS)


def bbs_search(
    model: LanguageModel, query: ElicitationQuery, config: FBBSConfig
) -> list[Belief]:
    """Same machinery as fbbs_search, ranking by the backward score alone."""
    return _lookahead_beam(model, query, config, Generator.BBS)


def fbs_search(
    model: LanguageModel, query: ElicitationQuery, config: FBBSConfig
) -> list[Belief]:
    """Standard forward beam search over the belief span.

    The ranking score is the cumulative forward log-probability including
    the terminator step; the recorded forward score excludes it.
    """
    if config.max_belief_len < 1:
        raise EmptyBeliefSpace("max_belief_len of 0 admits no belief")
    term = _terminator_id(model, config)
    finished = beam_search(
        model,
        query.x_pre.ids,
        width=config.beam_n,
        stop_tokens={term},
        max_len=config.max_belief_len,
        allow_empty=False,
    )
    if not finished:
        raise EmptyBeliefSpace(f"no belief completed for query {query.x_pre.text!r}")
    out = []
    for f in finished[: config.candidate_m]:
        back = model.sequence_logprob(query.x_pre.ids + f.tokens, query.y_suf.ids)
        seq = model.vocab.seq_from_ids(f.tokens)
        out.append(Belief(seq, seq.text, f.prefix_logprob, back, f.score, Generator.FBS))
    return out


POSTHOC_PROMPT = "{INPUT} The answer is {OUTPUT}. The concise fact to solve the problem is that"


def posthoc_explain(
    model: LanguageModel,
    question: str,
    answer: str,
    max_len: int,
    template: PromptTemplate = DEFAULT_TEMPLATE,
) -> Belief:
    """Greedy explanation generated with the answer already visible.

    The belief is scored after the fact against the standard elicitation
    query so scores are comparable across generators; ``combined`` is the
    joint forward-plus-backward log-probability.
    """
    if not question.strip() or not answer.strip():
        raise EmptyField("question and answer must be non-empty")
    prompt = POSTHOC_PROMPT.replace("{INPUT}", question).replace("{OUTPUT}", answer)
    query = build_query(question, answer, template, model)
    term = model.vocab.id_of(".")
    tokens, _truncated = model.greedy_complete(
        model.vocab.encode(prompt), {term, model.vocab.eos_id}, max_len
    )
    seq = model.vocab.seq_from_ids(tokens)
    if len(seq) == 0:
        raise EmptyBeliefSpace("post-hoc generation produced an empty belief")
    fwd = model.sequence_logprob(query.x_pre.ids, seq.ids)
    back = model.sequence_logprob(query.x_pre.ids + seq.ids, query.y_suf.ids)
    return Belief(seq, seq.text, fwd, back, fwd + back, Generator.POSTHOC)


def generate_beliefs(
    model: LanguageModel,
    question: str,
    answer: str,
    template: PromptTemplate,
    config: FBBSConfig,
    generator: Generator,
) -> list[Belief]:
    """Dispatch to the configured generator."""
    if generator is Generator.POSTHOC:
        return [posthoc_explain(model, question, answer, config.max_belief_len, template)]
    query = build_query(question, answer, template, model)
    if generator is Generator.FBBS:
        return fbbs_search(model, query, config)
    if generator is Generator.FBS:
        return fbs_search(model, query, config)
    if generator is Generator.BBS:
        return bbs_search(model, query, config)
    raise ValueError(f"unknown generator {generator}")


# ----------------------------------------------------------------------
# belief dump (one record per line)
# ----------------------------------------------------------------------


def write_beliefs(path, records: list[tuple[str, Belief]]) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for instance_id, b in records:
            f.write(
                json.dumps(
                    {
                        "instance_id": instance_id,
                        "generator": b.generator.value,
                        "text": b.text,
                        "ids": list(b.tokens.ids),
                        "fwd_logprob": b.fwd_logprob,
                        "back_logprob": b.back_logprob,
                        "combined": b.combined,
                    },
                    sort_keys=True,
                )
                + "\n"
            )


def read_beliefs(path, vocab) -> list[tuple[str, Belief]]:
    out = []
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            if not line.strip():
                continue
            rec = json.loads(line)
            seq = vocab.seq_from_ids(rec["ids"])
            out.append(
                (
                    rec["instance_id"],
                    Belief(
                        seq,
                        rec["text"],
                        rec["fwd_logprob"],
                        rec["back_logprob"],
                        rec["combined"],
                        Generator(rec["generator"]),
                    ),
                )
            )
    return out
