"""Dataset records, corpus membership, and train/dev/eval splitting."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import DuplicateId, InsufficientData, SchemaError
from .tokens import Vocabulary


@dataclass(frozen=True)
class QAInstance:
    """One question/answer record; choices and evidence are optional."""

    id: str
    question: str
    answer: str
    choices: tuple[tuple[str, str], ...] | None = None
    evidence: tuple[str, ...] | None = None

    def __post_init__(self):
        if not self.answer:
            raise ValueError(f"instance {self.id}: empty answer")
        if self.choices is not None:
            matches = [t for _, t in self.choices if t == self.answer]
            if len(matches) != 1:
                raise ValueError(
                    f"instance {self.id}: answer must equal exactly one choice text"
                )


def render_prompt(instance: QAInstance) -> str:
    """Question text, with choices rendered as ``(A) ..., (B) ...``."""
    if not instance.choices:
        return instance.question
    rendered = ", ".join(f"({label}) {text}" for label, text in instance.choices)
    return f"{instance.question} {rendered}"




def _parse_record(rec: dict, line_no: int) -> QAInstance:
    def fail(msg: str):
        raise SchemaError(f"line {line_no}: {msg}")

    if not isinstance(rec, dict):
        fail("record is not an object")
    for key in ("id", "question", "answer"):
        if key not in rec:
            fail(f"missing field '{key}'")
        if not isinstance(rec[key], str) or not rec[key]:
            fail(f"field '{key}' must be a non-empty string")
    choices = None
    if rec.get("choices") is not None:
        if not isinstance(rec["choices"], list) or not rec["choices"]:
            fail("field 'choices' must be a non-empty array")
        parsed = []
        for ch in rec["choices"]:
            if (
                not isinstance(ch, dict)
                or not isinstance(ch.get("label"), str)
                or not isinstance(ch.get("text"), str)
            ):
                fail("each choice needs string 'label' and 'text'")
            parsed.append((ch["label"], ch["text"]))
        choices = tuple(parsed)
    evidence = None
    if rec.get("evidence") is not None:
        if not isinstance(rec["evidence"], list) or not all(
            isinstance(e, str) and e for e in rec["evidence"]
        ):
            fail("field 'evidence' must be an array of non-empty strings")
        evidence = tuple(rec["evidence"])
    try:
        return QAInstance(rec["id"], rec["question"], rec["answer"], choices, evidence)
    except ValueError as exc:
        fail(str(exc))


def load_dataset(path) -> list[QAInstance]:
    """Read a line-delimited JSON dataset, validating every record."""
    instances: list[QAInstance] = []
    seen: set[str] = set()
    with open(path, "r", encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise SchemaError(f"line {line_no}: invalid JSON ({exc.msg})")
            inst = _parse_record(rec, line_no)
            if inst.id in seen:
                raise DuplicateId(f"line {line_no}: duplicate id '{inst.id}'")
            seen.add(inst.id)
            instances.append(inst)
    return instances


def save_dataset(path, instances: Sequence[QAInstance]) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for inst in instances:
            rec: dict = {"id": inst.id, "question": inst.question, "answer": inst.answer}
            if inst.choices is not None:
                rec["choices"] = [{"label": l, "text": t} for l, t in inst.choices]
            if inst.evidence is not None:
                rec["evidence"] = list(inst.evidence)
            f.write(json.dumps(rec, sort_keys=True) + "\n")


class CorpusIndex:
    """Verbatim-substring and token n-gram lookups over a document set."""

    def __init__(self, documents: Sequence[str]):
        self.documents = [d.rstrip("\n") for d in documents]
        # single blob makes contains() one C-level scan; the separator is a
        # character that never occurs inside a document line
        self._blob = "\n" + "\n".join(self.documents) + "\n"
        self._token_docs: list[list[int]] | None = None
        self._vocab_hash: str | None = None
        self._gram_sets: dict[int, set[tuple[int, ...]]] = {}

    @classmethod
    def from_file(cls, path) -> "CorpusIndex":
        text = Path(path).read_text(encoding="utf-8")
        return cls([ln for ln in text.splitlines() if ln.strip()])

    def __len__(self) -> int:
        return len(self.documents)

    def contains(self, needle: str) -> bool:
        """True iff ``needle`` occurs verbatim inside some document."""
        if not needle or "\n" in needle:
            return False
        return needle in self._blob

    # -- token-level n-gram index ------------------------------------

    def ensure_token_index(self, vocab: Vocabulary) -> None:
        if self._vocab_hash == vocab.content_hash():
            return
        self._token_docs = [vocab.encode(d) for d in self.documents]
        self._vocab_hash = vocab.content_hash()
        self._gram_sets = {}

    def _grams(self, n: int) -> set[tuple[int, ...]]:
        if self._token_docs is None:
            raise RuntimeError("token index not built; call ensure_token_index first")
        if n not in self._gram_sets:
            grams: set[tuple[int, ...]] = set()
            for doc in self._token_docs:
                for i in range(len(doc) - n + 1):
                    grams.add(tuple(doc[i : i + n]))
            self._gram_sets[n] = grams
        return self._gram_sets[n]

    def has_gram(self, gram: Sequence[int]) -> bool:
        gram = tuple(int(g) for g in gram)
        return gram in self._grams(len(gram))

    def longest_match(self, tokens: Sequence[int]) -> int:
        """Length of the longest contiguous token run occurring in the corpus.

        Presence is monotone in span length, so a binary search over the
        span length is exact.
        """
        toks = [int(t) for t in tokens]
        if self._token_docs is None:
            raise RuntimeError("token index not built; call ensure_token_index first")
        max_doc = max((len(d) for d in self._token_docs), default=0)
        lo, hi = 0, min(len(toks), max_doc)

        def any_span(n: int) -> bool:
            grams = self._grams(n)
            return any(tuple(toks[i : i + n]) in grams for i in range(len(toks) - n + 1))

        while lo < hi:
            mid = (lo + hi + 1) // 2
            if any_span(mid):
                lo = mid
            else:
                hi = mid - 1
        return lo


def membership_filter(
    instances: Iterable[QAInstance], corpus: CorpusIndex
) -> tuple[list[QAInstance], list[QAInstance]]:
    """Split instances by byte-exact corpus membership.

    An instance is a member iff both its question string and its answer
    string occur verbatim in some corpus document.
    """
    members, non_members = [], []
    for inst in instances:
        if corpus.contains(inst.question) and corpus.contains(inst.answer):
            members.append(inst)
        else:
            non_members.append(inst)
    return members, non_members


@dataclass(frozen=True)
class DatasetSplits:
    train: tuple[QAInstance, ...]
    dev: tuple[QAInstance, ...]
    eval: tuple[QAInstance, ...]

    def __post_init__(self):
        ids = [i.id for part in (self.train, self.dev, self.eval) for i in part]
        if len(ids) != len(set(ids)):
            raise ValueError("splits must be pairwise disjoint by id")
        if abs(len(self.dev) - len(self.eval)) > 1:
            raise ValueError("dev and eval sizes must differ by at most 1")


def make_splits(
    members: Sequence[QAInstance],
    non_members: Sequence[QAInstance],
    seed: int,
) -> DatasetSplits:
    """Members train; non-members shuffle under ``seed`` and halve dev/eval."""
    if len(non_members) < 2:
        raise InsufficientData(
            f"need at least 2 non-member instances, got {len(non_members)}"
        )
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(non_members))
    shuffled = [non_members[i] for i in order]
    half = len(shuffled) // 2
    return DatasetSplits(tuple(members), tuple(shuffled[:half]), tuple(shuffled[half:]))
