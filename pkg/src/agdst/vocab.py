"""Special-token registry, word tokenizer and token/id mapping."""

from __future__ import annotations

import enum
import hashlib
import re
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

from .core import DONT_CARE, NOT_MENTIONED, Schema, StructuralError

VOCAB_FORMAT = "# agdst-vocab v1"

PAD = "<pad>"
EOS = "<eos>"
UNK = "<unk>"
GEN_OPEN, GEN_CLOSE = "<gen/>", "</gen>"
AMEND_OPEN, AMEND_CLOSE = "<amend/>", "</amend>"
CON_OPEN, CON_CLOSE = "<con/>", "</con>"
SYS, USR = "<sys>", "<usr>"
DS_OPEN, DS_CLOSE = "<ds/>", "</ds>"
NAME_OPEN, NAME_CLOSE = "<name/>", "</name>"


class TokenKind(enum.Enum):
    PASS_MARKER = "pass_marker"
    CONTEXT_BOUNDARY = "context_boundary"
    ROLE = "role"
    STATE_BOUNDARY = "state_boundary"
    SLOT_NAME = "slot_name"
    VALUE_SENTINEL = "value_sentinel"
    NAME_BOUNDARY = "name_boundary"
    PAD = "pad"
    EOS = "eos"


@dataclass(frozen=True)
class SpecialToken:
    surface: str
    kind: TokenKind


FIXED_SPECIALS: tuple[SpecialToken, ...] = (
    SpecialToken(PAD, TokenKind.PAD),
    SpecialToken(EOS, TokenKind.EOS),
    SpecialToken(GEN_OPEN, TokenKind.PASS_MARKER),
    SpecialToken(GEN_CLOSE, TokenKind.PASS_MARKER),
    SpecialToken(AMEND_OPEN, TokenKind.PASS_MARKER),
    SpecialToken(AMEND_CLOSE, TokenKind.PASS_MARKER),
    SpecialToken(CON_OPEN, TokenKind.CONTEXT_BOUNDARY),
    SpecialToken(CON_CLOSE, TokenKind.CONTEXT_BOUNDARY),
    SpecialToken(SYS, TokenKind.ROLE),
    SpecialToken(USR, TokenKind.ROLE),
    SpecialToken(DS_OPEN, TokenKind.STATE_BOUNDARY),
    SpecialToken(DS_CLOSE, TokenKind.STATE_BOUNDARY),
    SpecialToken(NOT_MENTIONED, TokenKind.VALUE_SENTINEL),
    SpecialToken(DONT_CARE, TokenKind.VALUE_SENTINEL),
    SpecialToken(NAME_OPEN, TokenKind.NAME_BOUNDARY),
    SpecialToken(NAME_CLOSE, TokenKind.NAME_BOUNDARY),
)


def special_tokens(schema: Schema) -> tuple[SpecialToken, ...]:
    """Full registry for ``schema``: the fixed block then one token per slot."""
    return FIXED_SPECIALS + tuple(SpecialToken(s.token, TokenKind.SLOT_NAME) for s in schema.slots)


_SPECIAL_PATTERN = re.compile(r"(<[a-z0-9_/\-]+>)")


def tokenize(text: str, specials: Iterable[str] | None = None) -> list[str]:
    """Whitespace tokenizer that keeps registered special surfaces atomic.

    ``specials`` defaults to the fixed registry; slot tokens are matched too
    when passed explicitly.
    """
    registry = set(specials) if specials is not None else _FIXED_SURFACES
    out: list[str] = []
    for chunk in text.split():
        if chunk in registry:
            out.append(chunk)
            continue
        # split out registered surfaces glued to words ("<name/>camboats");
        # unregistered angle-bracket text stays part of the word
        buf = ""
        for piece in _SPECIAL_PATTERN.split(chunk):
            if piece in registry:
                if buf:
                    out.append(buf)
                    buf = ""
                out.append(piece)
            else:
                buf += piece
        if buf:
            out.append(buf)
    return out


_FIXED_SURFACES = frozenset(t.surface for t in FIXED_SPECIALS)


class Vocabulary:
    """Bijective token/id map with the special block first and ``<unk>`` right after it."""

    def __init__(self, tokens: Sequence[str], n_special: int):
        if len(set(tokens)) != len(tokens):
            raise StructuralError("duplicate tokens in vocabulary")
        self.tokens: tuple[str, ...] = tuple(tokens)
        self.n_special = n_special
        self._ids = {t: i for i, t in enumerate(self.tokens)}
        self.unk_id = self._ids[UNK]
        self.pad_id = self._ids[PAD]
        self.eos_id = self._ids[EOS]
        self.special_surfaces = frozenset(self.tokens[:n_special])

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, token: str) -> bool:
        return token in self._ids

    def id(self, token: str) -> int:
        return self._ids.get(token, self.unk_id)

    def encode(self, tokens: Iterable[str]) -> list[int]:
        ids = self._ids
        unk = self.unk_id
        return [ids.get(t, unk) for t in tokens]

    def decode(self, ids: Iterable[int]) -> list[str]:
        out = []
        n = len(self.tokens)
        for i in ids:
            i = int(i)
            if not 0 <= i < n:
                raise StructuralError(f"token id {i} out of range [0, {n})")
            out.append(self.tokens[i])
        return out

    def tokenize(self, text: str) -> list[str]:
        return tokenize(text, self.special_surfaces)

    @property
    def hash(self) -> str:
        h = hashlib.sha256()
        for t in self.tokens:
            h.update(t.encode("utf-8"))
            h.update(b"\n")
        h.update(str(self.n_special).encode())
        return h.hexdigest()

    def save(self, path) -> None:
        lines = [f"{VOCAB_FORMAT} specials={self.n_special}", *self.tokens]
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        lines = Path(path).read_text(encoding="utf-8").split("\n")
        header = lines[0]
        if not header.startswith(VOCAB_FORMAT):
            raise StructuralError(f"{path}: not a vocabulary file (header {header!r})")
        try:
            n_special = int(header.rsplit("specials=", 1)[1])
        except (IndexError, ValueError):
            raise StructuralError(f"{path}: malformed vocabulary header") from None
        tokens = lines[1:]
        if tokens and tokens[-1] == "":
            tokens = tokens[:-1]
        return cls(tokens, n_special)


def build_vocab(corpus_text: Iterable[str], schema: Schema, min_freq: int = 1,
                extra: Iterable[str] = ()) -> Vocabulary:
    """Specials first, then ``<unk>``, then words with count >= ``min_freq``.

    Words are ordered by descending frequency, ties broken lexicographically,
    so the id assignment depends only on the multiset of words.  Words of
    ``extra`` texts that are still missing are appended last, sorted.
    """
    if min_freq < 1:
        raise ValueError("min_freq must be >= 1")
    specials = [t.surface for t in special_tokens(schema)]
    registry = set(specials)
    counts: Counter[str] = Counter()
    for text in corpus_text:
        counts.update(t for t in tokenize(text, registry) if t not in registry)
    counts.pop(UNK, None)
    words = sorted((w for w, c in counts.items() if c >= min_freq), key=lambda w: (-counts[w], w))
    have = registry | set(words) | {UNK}
    words += sorted({t for text in extra for t in tokenize(text, registry)} - have)
    return Vocabulary(specials + [UNK] + words, n_special=len(specials))
