"""Grapheme tokenization, blank interleaving, and duration-driven expansion.

All operations are pure; sequences are kept as plain tuples so instances can
be shared freely between threads.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from pathlib import Path

from .errors import (
    AlreadyBlanked,
    EmptyExpansion,
    EmptyInput,
    LengthMismatch,
    UnknownSymbol,
)

BLANK = "~"
BLANK_ID = 0

# corpus-style default: blank, space, letters, digits, common punctuation
DEFAULT_SYMBOLS = (
    [BLANK, " "]
    + [chr(c) for c in range(ord("a"), ord("z") + 1)]
    + [str(d) for d in range(10)]
    + list(".,!?;:'\"-")
)


@dataclass(frozen=True)
class Vocab:
    symbols: tuple[str, ...]
    _lookup: dict[str, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if not self.symbols or self.symbols[0] != BLANK:
            raise ValueError("vocabulary must start with the blank symbol")
        if len(set(self.symbols)) != len(self.symbols):
            raise ValueError("vocabulary symbols must be distinct")
        object.__setattr__(self, "_lookup", {s: i for i, s in enumerate(self.symbols)})

    @property
    def blank_id(self) -> int:
        return BLANK_ID

    def __len__(self) -> int:
        return len(self.symbols)

    def lookup(self, symbol: str) -> int | None:
        return self._lookup.get(symbol)

    def symbol(self, idx: int) -> str:
        return self.symbols[idx]

    def sha256(self) -> str:
        return hashlib.sha256("\n".join(self.symbols).encode()).hexdigest()

    @classmethod
    def default(cls) -> "Vocab":
        return cls(tuple(DEFAULT_SYMBOLS))

    @classmethod
    def load(cls, path: str | Path) -> "Vocab":
        lines = Path(path).read_text(encoding="utf-8").split("\n")
        if lines and lines[-1] == "":
            lines = lines[:-1]
        return cls(tuple(lines))

    def save(self, path: str | Path) -> None:
        Path(path).write_text("\n".join(self.symbols) + "\n", encoding="utf-8")


@dataclass(frozen=True)
class TokenSeq:
    ids: tuple[int, ...]
    has_blanks: bool = False

    def __len__(self) -> int:
        return len(self.ids)


@dataclass(frozen=True)
class DurationSeq:
    durations: tuple[int, ...]

    def __len__(self) -> int:
        return len(self.durations)

    def total(self) -> int:
        return sum(self.durations)


def tokenize(text: str, vocab: Vocab) -> TokenSeq:
    """Map lowercased characters to vocabulary ids; punctuation kept as-is."""
    text = text.strip().lower()
    if not text:
        raise EmptyInput("no characters left after trimming")
    ids = []
    for pos, ch in enumerate(text):
        idx = vocab.lookup(ch)
        if idx is None or idx == vocab.blank_id:
            raise UnknownSymbol(ch, pos)
        ids.append(idx)
    return TokenSeq(tuple(ids), has_blanks=False)


def insert_blanks(seq: TokenSeq, blank_id: int = BLANK_ID) -> TokenSeq:
    """Interleave blanks: [t1..tn] -> [~, t1, ~, ..., tn, ~] (length 2n+1)."""
    if seq.has_blanks:
        raise AlreadyBlanked("sequence is already blank-interleaved")
    out = [blank_id]
    for t in seq.ids:
        out.append(t)
        out.append(blank_id)
    return TokenSeq(tuple(out), has_blanks=True)


def strip_blanks(seq: TokenSeq, blank_id: int = BLANK_ID) -> TokenSeq:
    if not seq.has_blanks:
        return seq
    return TokenSeq(tuple(t for t in seq.ids if t != blank_id), has_blanks=False)


def expand_by_durations(seq: TokenSeq, durs: DurationSeq) -> TokenSeq:
    """Repeat token i durs[i] times; output length is exactly sum(durs)."""
    if not seq.has_blanks:
        raise AlreadyBlanked("expansion expects a blank-interleaved sequence")
    if len(seq) != len(durs):
        raise LengthMismatch(f"{len(seq)} tokens vs {len(durs)} durations")
    if durs.total() == 0:
        raise EmptyExpansion("all durations are zero")
    out = []
    for t, d in zip(seq.ids, durs.durations):
        out.extend([t] * d)
    return TokenSeq(tuple(out), has_blanks=False)
