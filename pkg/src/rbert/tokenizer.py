"""WordPiece tokenization with `$`/`#` entity markers and entity subword ranges."""

from __future__ import annotations

import unicodedata
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .data import RelationInstance

PAD, UNK, CLS, SEP, MASK = "[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"
E1_MARK, E2_MARK = "$", "#"
SPECIAL_TOKENS = (PAD, UNK, CLS, SEP, MASK, E1_MARK, E2_MARK)
MAX_WORD_CHARS = 100


class EncodingError(ValueError):
    pass


class Vocab:
    """Immutable token <-> id map; ``##`` marks word-internal continuation pieces."""

    def __init__(self, tokens: Sequence[str]):
        tokens = tuple(tokens)
        index = {}
        for i, tok in enumerate(tokens):
            if tok in index:
                raise ValueError(f"duplicate vocab token {tok!r} at line {i + 1}")
            index[tok] = i
        for tok in (PAD, UNK, CLS, E1_MARK, E2_MARK):
            if tok not in index:
                raise ValueError(f"vocab lacks required token {tok!r}")
        self.tokens = tokens
        self._index = index

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, token: str) -> bool:
        return token in self._index

    def __getitem__(self, token: str) -> int:
        return self._index[token]

    def get(self, token: str, default: int | None = None) -> int | None:
        return self._index.get(token, default)

    @property
    def pad_id(self) -> int:
        return self._index[PAD]

    @property
    def unk_id(self) -> int:
        return self._index[UNK]

    @property
    def cls_id(self) -> int:
        return self._index[CLS]

    @property
    def sep_id(self) -> int | None:
        return self._index.get(SEP)

    @property
    def e1_id(self) -> int:
        return self._index[E1_MARK]

    @property
    def e2_id(self) -> int:
        return self._index[E2_MARK]

    @classmethod
    def from_file(cls, path: str | Path) -> "Vocab":
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        return cls([ln.rstrip("\r\n") for ln in lines if ln.strip()])

    def to_file(self, path: str | Path) -> None:
        Path(path).write_text("".join(t + "\n" for t in self.tokens), encoding="utf-8")

    @classmethod
    def build(cls, instances: Iterable[RelationInstance], min_count: int = 1) -> "Vocab":
        """Vocabulary from a corpus: specials, every seen character (plain and ``##``),
        then whole words with ``count >= min_count`` by descending frequency.

        Character pieces guarantee every corpus word decomposes without [UNK].
        """
        words: Counter[str] = Counter()
        for inst in instances:
            for w in inst.sentence:
                words.update(basic_tokenize(w))
        chars = sorted({c for w in words for c in w})
        tokens = list(SPECIAL_TOKENS)
        seen = set(tokens)
        for tok in chars + ["##" + c for c in chars]:
            if tok not in seen:
                tokens.append(tok)
                seen.add(tok)
        for w, c in sorted(words.items(), key=lambda kv: (-kv[1], kv[0])):
            if c >= min_count and w not in seen:
                tokens.append(w)
                seen.add(w)
        return cls(tokens)


def _is_punct(ch: str) -> bool:
    cp = ord(ch)
    if 33 <= cp <= 47 or 58 <= cp <= 64 or 91 <= cp <= 96 or 123 <= cp <= 126:
        return True
    return unicodedata.category(ch).startswith("P")


def basic_tokenize(word: str) -> list[str]:
    """Lowercase, strip accents and split punctuation into separate tokens (uncased BERT)."""
    word = unicodedata.normalize("NFD", word.lower())
    word = "".join(c for c in word if unicodedata.category(c) != "Mn")
    out: list[str] = []
    cur = ""
    for ch in word:
        if ch.isspace():
            if cur:
                out.append(cur)
            cur = ""
        elif _is_punct(ch):
            if cur:
                out.append(cur)
            out.append(ch)
            cur = ""
        else:
            cur += ch
    if cur:
        out.append(cur)
    return out


def wordpiece(word: str, vocab: Vocab) -> list[int]:
    """Greedy longest-match-first split of one word; [UNK] if no full decomposition."""
    if not word:
        raise ValueError("empty word")
    if len(word) > MAX_WORD_CHARS:
        return [vocab.unk_id]
    pieces = []
    start = 0
    while start < len(word):
        end = len(word)
        found = None
        while start < end:
            sub = word[start:end] if start == 0 else "##" + word[start:end]
            found = vocab.get(sub)
            if found is not None:
                break
            end -= 1
        if found is None:
            return [vocab.unk_id]
        pieces.append(found)
        start = end
    return pieces


def tokenize_words(words: Iterable[str], vocab: Vocab) -> list[int]:
    ids = []
    for w in words:
        for tok in basic_tokenize(w):
            # literal marker characters in text would alias the entity markers
            if tok in (E1_MARK, E2_MARK):
                ids.append(vocab.unk_id)
            else:
                ids.extend(wordpiece(tok, vocab))
    return ids


@dataclass(frozen=True)
class EncodedExample:
    id: int
    input_ids: tuple[int, ...]
    attention_mask: tuple[int, ...]
    e1_range: tuple[int, int]
    e2_range: tuple[int, int]
    label_index: int
    markers: bool = True

    @property
    def length(self) -> int:
        return sum(self.attention_mask)


def encode(
    instance: RelationInstance,
    vocab: Vocab,
    max_len: int,
    label_index: int | None = None,
    markers: bool = True,
    add_sep: bool = False,
) -> EncodedExample:
    """Marked, subword-tokenized, padded encoding of one instance.

    With ``markers=False`` the `$`/`#` tokens are omitted but the entity ranges
    still index the entity subwords.  ``label_index`` defaults to the
    instance's label class index (-1 when unlabeled).
    """
    if max_len < 8:
        raise ValueError(f"max_len must be >= 8, got {max_len}")
    s = instance.sentence
    (a1, b1), (a2, b2) = instance.e1_span, instance.e2_span
    # segments in sentence order; entity kind decides the marker, not position
    first, second = ((a1, b1, E1_MARK), (a2, b2, E2_MARK))
    if a2 < a1:
        first, second = second, first

    ids = [vocab.cls_id]
    ranges: dict[str, tuple[int, int]] = {}
    required_end = 0
    cursor = 0
    for a, b, mark in (first, second):
        ids.extend(tokenize_words(s[cursor:a], vocab))
        if markers:
            ids.append(vocab[mark])
        ent = tokenize_words(s[a : b + 1], vocab) or [vocab.unk_id]
        ranges[mark] = (len(ids), len(ids) + len(ent) - 1)
        ids.extend(ent)
        if markers:
            ids.append(vocab[mark])
        required_end = len(ids)
        cursor = b + 1
    ids.extend(tokenize_words(s[cursor:], vocab))
    if add_sep:
        if vocab.sep_id is None:
            raise EncodingError("vocab has no [SEP] token")
        ids.append(vocab.sep_id)

    if required_end > max_len:
        raise EncodingError(
            f"instance {instance.id}: entities/markers need {required_end} positions, max_len is {max_len}"
        )
    ids = ids[:max_len]
    n = len(ids)
    if label_index is None:
        label_index = instance.label.class_index if instance.label is not None else -1
    return EncodedExample(
        id=instance.id,
        input_ids=tuple(ids) + (vocab.pad_id,) * (max_len - n),
        attention_mask=(1,) * n + (0,) * (max_len - n),
        e1_range=ranges[E1_MARK],
        e2_range=ranges[E2_MARK],
        label_index=label_index,
        markers=markers,
    )


def encode_all(instances: Iterable[RelationInstance], vocab: Vocab, max_len: int, markers: bool = True) -> list[EncodedExample]:
    return [encode(inst, vocab, max_len, markers=markers) for inst in instances]


def decode(ids: Iterable[int], vocab: Vocab) -> str:
    words: list[str] = []
    for i in ids:
        tok = vocab.tokens[i]
        if tok.startswith("##") and words:
            words[-1] += tok[2:]
        else:
            words.append(tok)
    return " ".join(words)


@dataclass
class Batch:
    ids: list[int]
    input_ids: np.ndarray  # (B, n) int
    attention_mask: np.ndarray  # (B, n) 0/1
    e1_ranges: np.ndarray  # (B, 2) inclusive
    e2_ranges: np.ndarray  # (B, 2) inclusive
    labels: np.ndarray  # (B,)
    markers: bool = True

    def __len__(self) -> int:
        return len(self.ids)


def pad_batch(examples: Sequence[EncodedExample]) -> Batch:
    if not examples:
        raise ValueError("cannot batch an empty list of examples")
    n = len(examples[0].input_ids)
    if any(len(ex.input_ids) != n for ex in examples):
        raise ValueError("examples were encoded with different max_len")
    markers = examples[0].markers
    if any(ex.markers != markers for ex in examples):
        raise ValueError("examples mix marked and marker-free encodings")
    return Batch(
        ids=[ex.id for ex in examples],
        input_ids=np.array([ex.input_ids for ex in examples], dtype=np.int64),
        attention_mask=np.array([ex.attention_mask for ex in examples], dtype=np.int8),
        e1_ranges=np.array([ex.e1_range for ex in examples], dtype=np.int64),
        e2_ranges=np.array([ex.e2_range for ex in examples], dtype=np.int64),
        labels=np.array([ex.label_index for ex in examples], dtype=np.int64),
        markers=markers,
    )
