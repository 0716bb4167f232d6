"""Word-level tokenization and the fixed vocabulary a model is bound to.

Tokens are plain integer ids.  A :class:`Vocabulary` owns the id table and
the tokenize/detokenize rules; a :class:`TokenSequence` pairs ids with the
detokenized text so downstream code never re-derives one from the other.
"""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass
from typing import Iterable, Sequence

PAD = "<pad>"
BOS = "<bos>"
EOS = "<eos>"
UNK = "<unk>"
SPECIALS = (PAD, BOS, EOS, UNK)

# A token is a run of word characters or a single punctuation mark.
_TOKEN_RE = re.compile(r"\w+|[^\w\s]")

# Punctuation that attaches to the preceding token when detokenizing,
# and marks that attach to the following one.
_ATTACH_LEFT = {".", ",", "?", "!", ";", ":", ")", "'"}
_ATTACH_RIGHT = {"("}


def split_words(text: str) -> list[str]:
    """Split text into word/punctuation surface tokens."""
    return _TOKEN_RE.findall(text)


def join_words(words: Sequence[str]) -> str:
    """Inverse of :func:`split_words` for canonically spaced text."""
    out: list[str] = []
    prev = ""
    for w in words:
        if out and w not in _ATTACH_LEFT and prev not in _ATTACH_RIGHT:
            out.append(" ")
        out.append(w)
        prev = w
    return "".join(out)


@dataclass(frozen=True)
class TokenSequence:
    """An ordered run of token ids together with its surface text."""

    ids: tuple[int, ...]
    text: str

    def __len__(self) -> int:
        return len(self.ids)

    def __add__(self, other: "TokenSequence") -> "TokenSequence":
        if not other.ids:
            return self
        if not self.ids:
            return other
        text = join_words(split_words(self.text) + split_words(other.text))
        return TokenSequence(self.ids + other.ids, text)


class Vocabulary:
    """Fixed token table with reserved pad/bos/eos/unk entries.

    The table is immutable once built; models persist its hash so a
    checkpoint can refuse to load against the wrong vocabulary.
    """

    def __init__(self, words: Iterable[str]):
        uniq = sorted(set(words) - set(SPECIALS))
        self._words: tuple[str, ...] = SPECIALS + tuple(uniq)
        self._index = {w: i for i, w in enumerate(self._words)}
        self.pad_id = self._index[PAD]
        self.bos_id = self._index[BOS]
        self.eos_id = self._index[EOS]
        self.unk_id = self._index[UNK]

    @classmethod
    def from_texts(cls, texts: Iterable[str]) -> "Vocabulary":
        words: set[str] = set()
        for t in texts:
            words.update(split_words(t))
        return cls(words)

    def __len__(self) -> int:
        return len(self._words)

    def __contains__(self, word: str) -> bool:
        return word in self._index

    @property
    def words(self) -> tuple[str, ...]:
        return self._words

    def word(self, token_id: int) -> str:
        return self._words[token_id]

    def id_of(self, word: str) -> int:
        return self._index.get(word, self.unk_id)

    def encode(self, text: str) -> list[int]:
        return [self._index.get(w, self.unk_id) for w in split_words(text)]

    def decode(self, ids: Sequence[int]) -> str:
        return join_words([self._words[i] for i in ids])

    def seq(self, text: str) -> TokenSequence:
        ids = tuple(self.encode(text))
        return TokenSequence(ids, self.decode(ids))

    def seq_from_ids(self, ids: Sequence[int]) -> TokenSequence:
        ids = tuple(int(i) for i in ids)
        return TokenSequence(ids, self.decode(ids))

    def content_hash(self) -> str:
        blob = "\x00".join(self._words).encode("utf-8")
        return hashlib.sha256(blob).hexdigest()


EMPTY_SEQUENCE = TokenSequence((), "")
