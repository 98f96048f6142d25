"""Turns and states to tagged token sequences, and decoded tokens back to states."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .core import (
    DONT_CARE,
    NOT_MENTIONED,
    DialogueState,
    Schema,
    StructuralError,
    normalize_value,
)
from .vocab import (
    AMEND_CLOSE,
    AMEND_OPEN,
    CON_CLOSE,
    CON_OPEN,
    DS_CLOSE,
    DS_OPEN,
    EOS,
    GEN_CLOSE,
    GEN_OPEN,
    NAME_CLOSE,
    NAME_OPEN,
    SYS,
    USR,
    Vocabulary,
    tokenize,
)


class Role(enum.IntEnum):
    SYSTEM = 0
    USER = 1
    STATE = 2
    MARKER = 3


class Segment(enum.IntEnum):
    CONTEXT = 0
    STATE = 1


class PassKind(enum.Enum):
    BASIC = "basic"
    AMENDING = "amending"


class ContextMode(enum.Enum):
    CURRENT_TURN = "current_turn"
    FULL_HISTORY = "full_history"


# groups of special tokens that can be switched off for ablations
TOGGLES = {
    "name": (NAME_OPEN, NAME_CLOSE),
    "utterance": (CON_OPEN, CON_CLOSE, SYS, USR),
    "ds": (DS_OPEN, DS_CLOSE),
}

_MARKERS = {
    PassKind.BASIC: (GEN_OPEN, GEN_CLOSE),
    PassKind.AMENDING: (AMEND_OPEN, AMEND_CLOSE),
}


@dataclass(frozen=True)
class Turn:
    system: str
    user: str
    system_spans: tuple[tuple[int, int], ...] = ()
    user_spans: tuple[tuple[int, int], ...] = ()

    def __post_init__(self) -> None:
        if not self.user.strip():
            raise StructuralError("user utterance must be nonempty")
        for text, spans in ((self.system, self.system_spans), (self.user, self.user_spans)):
            last = 0
            for start, end in sorted(spans):
                if not (0 <= start < end <= len(text)) or start < last:
                    raise StructuralError(f"bad name span {(start, end)} for {text!r}")
                last = end
        object.__setattr__(self, "system_spans", tuple(tuple(s) for s in self.system_spans))
        object.__setattr__(self, "user_spans", tuple(tuple(s) for s in self.user_spans))


@dataclass(frozen=True)
class LayoutConfig:
    """Input-structure switches: special-token ablations and context layout."""

    disabled: frozenset[str] = frozenset()
    context_mode: ContextMode = ContextMode.CURRENT_TURN
    state_memory: bool = True
    max_input_len: int = 224

    def __post_init__(self) -> None:
        unknown = set(self.disabled) - set(TOGGLES)
        if unknown:
            raise ValueError(f"unknown token toggles {sorted(unknown)}")
        object.__setattr__(self, "disabled", frozenset(self.disabled))

    def enabled(self, group: str) -> bool:
        return group not in self.disabled

    @property
    def stop_token(self) -> str:
        return DS_CLOSE if self.enabled("ds") else EOS


DEFAULT_LAYOUT = LayoutConfig()


@dataclass(frozen=True)
class TaggedSequence:
    token_ids: tuple[int, ...]
    positions: tuple[int, ...]
    roles: tuple[int, ...]
    segments: tuple[int, ...]
    target_mask: tuple[bool, ...]
    warnings: tuple[str, ...] = field(default=(), compare=False)

    def __post_init__(self) -> None:
        n = len(self.token_ids)
        if not (len(self.positions) == len(self.roles) == len(self.segments) == len(self.target_mask) == n):
            raise StructuralError("tagged sequence fields differ in length")

    def __len__(self) -> int:
        return len(self.token_ids)

    @property
    def n_targets(self) -> int:
        return sum(self.target_mask)

    def extend(self, ids: Sequence[int], role: int, segment: int, target: bool) -> "TaggedSequence":
        n0 = len(self.token_ids)
        k = len(ids)
        return TaggedSequence(
            self.token_ids + tuple(ids),
            tuple(range(n0 + k)),
            self.roles + (int(role),) * k,
            self.segments + (int(segment),) * k,
            self.target_mask + (target,) * k,
            self.warnings,
        )


def _wrap_spans(text: str, spans) -> str:
    for start, end in sorted(spans, reverse=True):
        text = f"{text[:start]} {NAME_OPEN} {text[start:end]} {NAME_CLOSE} {text[end:]}"
    return text


def _turn_items(turn: Turn, layout: LayoutConfig) -> list[tuple[str, Role]]:
    names = layout.enabled("name")
    system = _wrap_spans(turn.system, turn.system_spans) if names else turn.system
    user = _wrap_spans(turn.user, turn.user_spans) if names else turn.user
    utterance_marks = layout.enabled("utterance")
    items: list[tuple[str, Role]] = []
    if utterance_marks:
        items += [(CON_OPEN, Role.MARKER), (SYS, Role.MARKER)]
    items += [(t, Role.MARKER if t in (NAME_OPEN, NAME_CLOSE) else Role.SYSTEM) for t in tokenize(system.lower())]
    if utterance_marks:
        items.append((USR, Role.MARKER))
    items += [(t, Role.MARKER if t in (NAME_OPEN, NAME_CLOSE) else Role.USER) for t in tokenize(user.lower())]
    if utterance_marks:
        items.append((CON_CLOSE, Role.MARKER))
    return items


def serialize_turn(turn: Turn, layout: LayoutConfig = DEFAULT_LAYOUT) -> list[str]:
    """``<con/> <sys> R <usr> U </con>`` with ``<name/> .. </name>`` around name spans."""
    return [t for t, _ in _turn_items(turn, layout)]


def value_tokens(value: str) -> list[str]:
    if value in (NOT_MENTIONED, DONT_CARE):
        return [value]
    return value.split()


def serialize_state(state: DialogueState, schema: Schema, layout: LayoutConfig = DEFAULT_LAYOUT) -> list[str]:
    if state.schema.slots != schema.slots:
        raise StructuralError("state is over a different schema")
    out = [DS_OPEN] if layout.enabled("ds") else []
    for slot, value in state.items():
        out.append(slot.token)
        out.extend(value_tokens(value))
    if layout.enabled("ds"):
        out.append(DS_CLOSE)
    return out


def parse_state(
    tokens: Iterable[str], schema: Schema, fallback: DialogueState
) -> tuple[DialogueState, list[str]]:
    """Slot-token-anchored, total parse of a (possibly malformed) decoded state.

    The value of a slot is the run of tokens between its slot token and the
    next slot token, ``</ds>`` or ``<eos>``.  Missing slots keep the
    fallback value, duplicated slots take their last occurrence, empty
    values become ``<nm>``.  Every such repair adds a warning.
    """
    if fallback.schema.slots != schema.slots:
        raise StructuralError("fallback state is over a different schema")
    slot_of = {s.token: s for s in schema.slots}
    warnings: list[str] = []
    spans: dict = {}
    current = None
    stray: list[str] = []
    for tok in tokens:
        if tok in (DS_CLOSE, EOS):
            break
        if tok in slot_of:
            current = slot_of[tok]
            if current in spans:
                warnings.append(f"duplicate slot {current.name}; last occurrence wins")
            spans[current] = []
        elif current is None:
            if tok != DS_OPEN:
                stray.append(tok)
        else:
            spans[current].append(tok)
    if stray:
        warnings.append(f"ignored {len(stray)} tokens before the first slot")

    values = list(fallback.values)
    for i, slot in enumerate(schema.slots):
        if slot not in spans:
            warnings.append(f"missing slot {slot.name}; kept fallback value")
            continue
        values[i] = _value_from_tokens(slot.name, spans[slot], warnings)
    return DialogueState(schema, values), warnings


def _value_from_tokens(name: str, toks: list[str], warnings: list[str]) -> str:
    if not toks:
        warnings.append(f"empty value for {name}; using {NOT_MENTIONED}")
        return NOT_MENTIONED
    if len(toks) == 1 and toks[0] in (NOT_MENTIONED, DONT_CARE):
        return toks[0]
    sentinels = [t for t in toks if t in (NOT_MENTIONED, DONT_CARE)]
    words = [t for t in toks if t not in (NOT_MENTIONED, DONT_CARE) and not _is_structural(t)]
    if len(words) != len(toks):
        warnings.append(f"dropped special tokens inside value of {name}")
    if words:
        return normalize_value(" ".join(words))
    return sentinels[0] if sentinels else NOT_MENTIONED


_STRUCTURAL = {DS_OPEN, GEN_OPEN, GEN_CLOSE, AMEND_OPEN, AMEND_CLOSE, CON_OPEN, CON_CLOSE, SYS, USR, NAME_OPEN, NAME_CLOSE, "<pad>"}


def _is_structural(tok: str) -> bool:
    return tok in _STRUCTURAL


def build_pass_input(
    pass_kind: PassKind,
    turn: Turn,
    conditioning_state: DialogueState,
    schema: Schema,
    vocab: Vocabulary,
    layout: LayoutConfig = DEFAULT_LAYOUT,
    history: Sequence[Turn] = (),
) -> TaggedSequence:
    """Model input for one pass: open marker, context, conditioning state, close marker.

    The basic pass conditions on the previous state, the amending pass on the
    primitive state.  Under ``FULL_HISTORY`` all of ``history`` precedes the
    current turn; the oldest turns are dropped first when the input would
    exceed ``layout.max_input_len``.
    """
    open_tok, close_tok = _MARKERS[pass_kind]
    if layout.context_mode is ContextMode.FULL_HISTORY:
        context_turns = [_turn_items(t, layout) for t in history] + [_turn_items(turn, layout)]
    else:
        context_turns = [_turn_items(turn, layout)]

    with_state = layout.state_memory or pass_kind is PassKind.AMENDING
    state_toks = serialize_state(conditioning_state, schema, layout) if with_state else []

    warnings = []
    fixed = 2 + len(state_toks) + len(context_turns[-1])
    while len(context_turns) > 1 and fixed + sum(len(c) for c in context_turns[:-1]) > layout.max_input_len:
        context_turns.pop(0)
        warnings.append("dropped oldest history turn to fit max_input_len")
    total = fixed + sum(len(c) for c in context_turns[:-1])
    if total > layout.max_input_len:
        warnings.append(f"input length {total} exceeds max_input_len {layout.max_input_len}")

    toks = [open_tok]
    roles = [Role.MARKER]
    segs = [Segment.CONTEXT]
    for items in context_turns:
        for t, r in items:
            toks.append(t)
            roles.append(r)
            segs.append(Segment.CONTEXT)
    toks += state_toks
    roles += [Role.STATE] * len(state_toks)
    segs += [Segment.STATE] * len(state_toks)
    toks.append(close_tok)
    roles.append(Role.MARKER)
    segs.append(Segment.CONTEXT)

    n = len(toks)
    return TaggedSequence(
        tuple(vocab.encode(toks)),
        tuple(range(n)),
        tuple(int(r) for r in roles),
        tuple(int(s) for s in segs),
        (False,) * n,
        tuple(warnings),
    )


def append_target(
    seq: TaggedSequence,
    gold: DialogueState,
    schema: Schema,
    vocab: Vocabulary,
    layout: LayoutConfig = DEFAULT_LAYOUT,
) -> TaggedSequence:
    if any(seq.target_mask):
        raise StructuralError("input already carries a target")
    ids = vocab.encode(serialize_state(gold, schema, layout) + [EOS])
    return seq.extend(ids, Role.STATE, Segment.STATE, True)
