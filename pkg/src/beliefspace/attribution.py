"""Gradient-based training-data attribution for the knowledge baseline.

Scores are computed at the current checkpoint from whole-parameter
gradients, flattened in the model's documented parameter order.  Methods
beyond the two gradient-similarity scores are named for configuration
compatibility but route to an extension registry and are not shipped.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Sequence

import numpy as np

from .errors import DegenerateGradient, EmptyPool
from .lm import as_ids
from .tokens import TokenSequence


class TDAMethod(str, Enum):
    GRAD_DOT = "grad-dot"
    GRAD_COS = "grad-cos"
    HIF = "hif"
    UNTRAC = "untrac"
    UNTRAC_INV = "untrac-inv"


@dataclass(frozen=True)
class EvidenceDoc:
    id: str
    text: str
    source_instance: str | None = None

    def __post_init__(self):
        if not self.text:
            raise ValueError("evidence document text must be non-empty")


@dataclass(frozen=True)
class AttributionScore:
    doc_id: str
    method: TDAMethod
    value: float


def example_gradient(model, context, target) -> np.ndarray:
    """Flat gradient of the target-token NLL over all trainable parameters.

    Flattening follows ``model.parameter_names()`` order, each array in C
    order.
    """
    if len(as_ids(target)) == 0:
        raise ValueError("target must be non-empty")
    _, grads = model.nll_gradient(context, target)
    return np.concatenate([grads[name].ravel() for name in model.parameter_names()])


def _doc_gradient(model, doc: EvidenceDoc) -> np.ndarray:
    return example_gradient(model, (), model.vocab.encode(doc.text))


def grad_dot(
    model, doc: EvidenceDoc, query: tuple[TokenSequence, TokenSequence]
) -> AttributionScore:
    """Dot product between the doc gradient and the query gradient."""
    g_doc = _doc_gradient(model, doc)
    g_query = example_gradient(model, query[0], query[1])
    return AttributionScore(doc.id, TDAMethod.GRAD_DOT, float(g_doc @ g_query))


def grad_cos(
    model, doc: EvidenceDoc, query: tuple[TokenSequence, TokenSequence]
) -> AttributionScore:
    """Cosine similarity between the doc gradient and the query gradient."""
    g_doc = _doc_gradient(model, doc)
    g_query = example_gradient(model, query[0], query[1])
    n_doc = float(np.linalg.norm(g_doc))
    n_query = float(np.linalg.norm(g_query))
    if n_doc <= 1e-12 or n_query <= 1e-12:
        raise DegenerateGradient(
            f"gradient norm too small for cosine (doc={n_doc:g}, query={n_query:g})"
        )
    return AttributionScore(doc.id, TDAMethod.GRAD_COS, float(g_doc @ g_query) / (n_doc * n_query))


_SCORERS: dict[TDAMethod, Callable] = {
    TDAMethod.GRAD_DOT: grad_dot,
    TDAMethod.GRAD_COS: grad_cos,
}


def register_scorer(method: TDAMethod, fn: Callable) -> None:
    """Extension point for attribution methods defined elsewhere."""
    _SCORERS[method] = fn


def scorer_for(method: TDAMethod) -> Callable:
    if method not in _SCORERS:
        raise NotImplementedError(f"method not implemented: {method.value}")
    return _SCORERS[method]


def rank_pool(
    model,
    pool: Sequence[EvidenceDoc],
    query: tuple[TokenSequence, TokenSequence],
    method: TDAMethod,
    top_k: int,
) -> list[AttributionScore]:
    """Score every pool document and return the ``top_k`` best.

    Descending by value, ties broken by doc id.
    """
    if not pool:
        raise EmptyPool("attribution pool is empty")
    fn = scorer_for(method)
    scores = [fn(model, doc, query) for doc in pool]
    scores.sort(key=lambda s: (-s.value, s.doc_id))
    return scores[: max(0, top_k)]


def write_scores(path, rows: Sequence[tuple[str, AttributionScore]]) -> None:
    """Line-delimited dump: query id, doc id, method, value."""
    with open(path, "w", encoding="utf-8") as f:
        for query_id, s in rows:
            f.write(
                json.dumps(
                    {
                        "query_id": query_id,
                        "doc_id": s.doc_id,
                        "method": s.method.value,
                        "value": s.value,
                    },
                    sort_keys=True,
                )
                + "\n"
            )
