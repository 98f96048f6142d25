"""Dialogue-state value algebra.

Slot values are plain strings: the two sentinels ``<nm>`` (not mentioned)
and ``<dc>`` (don't care), or a normalized literal.  States are total,
immutable assignments over an ordered :class:`Schema`.
"""

from __future__ import annotations

import enum
import re
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Mapping

NOT_MENTIONED = "<nm>"
DONT_CARE = "<dc>"
SENTINELS = (NOT_MENTIONED, DONT_CARE)

_WS = re.compile(r"\s+")
_TERMINAL_PUNCT = ".,!?;:"
_IDENT = re.compile(r"^[a-z0-9_]+$")
_SLOT_NAME = re.compile(r"^[a-z0-9_\-]+$")

# raw annotations seen in MultiWOZ/WOZ exports
_NM_ALIASES = {"", "<nm>", "none", "not mentioned", "not given"}
_DC_ALIASES = {"<dc>", "dontcare", "don't care", "do n't care", "dont care", "does not care"}


class StructuralError(ValueError):
    """Raised when objects from different schemas are combined, or a slot is unknown."""


class ConfigError(ValueError):
    """An invalid or inconsistent configuration value."""


def normalize_text(text: str) -> str:
    """Lowercase, trim and collapse internal whitespace."""
    return _WS.sub(" ", text.strip().lower())


def normalize_value(raw: str) -> str:
    """Map a raw annotation onto its canonical slot value."""
    text = normalize_text(raw)
    while text and text[-1] in _TERMINAL_PUNCT:
        text = text[:-1].rstrip()
    if text in _NM_ALIASES:
        return NOT_MENTIONED
    if text in _DC_ALIASES:
        return DONT_CARE
    return text


def is_literal(value: str) -> bool:
    return value not in SENTINELS


@dataclass(frozen=True)
class SlotId:
    domain: str
    slot: str

    def __post_init__(self) -> None:
        if not _IDENT.match(self.domain):
            raise StructuralError(f"bad domain identifier {self.domain!r}")
        if not _SLOT_NAME.match(self.slot):
            raise StructuralError(f"bad slot identifier {self.slot!r}")

    @classmethod
    def parse(cls, name: str) -> "SlotId":
        domain, sep, slot = name.strip().lower().partition("-")
        if not sep:
            raise StructuralError(f"slot name {name!r} is not of the form domain-slot")
        return cls(domain, slot.replace(" ", ""))

    @property
    def name(self) -> str:
        return f"{self.domain}-{self.slot}"

    @property
    def token(self) -> str:
        return f"<{self.name}>"

    def __str__(self) -> str:
        return self.name


@dataclass(frozen=True)
class Schema:
    """Ordered slot layout plus optional ontology and correlated slot pairs."""

    slots: tuple[SlotId, ...]
    ontology: Mapping[SlotId, tuple[str, ...]] = field(default_factory=dict, compare=False)
    correlated_pairs: tuple[tuple[SlotId, SlotId], ...] = field(default=(), compare=False)

    def __post_init__(self) -> None:
        slots = tuple(self.slots)
        if not slots:
            raise StructuralError("schema needs at least one slot")
        if len(set(slots)) != len(slots):
            raise StructuralError("duplicate slot ids in schema")
        object.__setattr__(self, "slots", slots)
        object.__setattr__(self, "_index", {s: i for i, s in enumerate(slots)})
        object.__setattr__(self, "_by_name", {s.name: s for s in slots})
        onto = {}
        for key, values in dict(self.ontology).items():
            slot = self.resolve(key)
            onto[slot] = tuple(dict.fromkeys(normalize_value(v) for v in values if is_literal(normalize_value(v))))
        object.__setattr__(self, "ontology", onto)
        pairs = tuple((self.resolve(a), self.resolve(b)) for a, b in self.correlated_pairs)
        object.__setattr__(self, "correlated_pairs", pairs)

    @classmethod
    def from_names(cls, names: Iterable[str], ontology=None, correlated_pairs=()) -> "Schema":
        return cls(tuple(SlotId.parse(n) for n in names), ontology or {}, tuple(correlated_pairs))

    def __len__(self) -> int:
        return len(self.slots)

    def __iter__(self) -> Iterator[SlotId]:
        return iter(self.slots)

    def __contains__(self, key) -> bool:
        try:
            self.resolve(key)
        except StructuralError:
            return False
        return True

    def resolve(self, key) -> SlotId:
        if isinstance(key, SlotId):
            if key in self._index:
                return key
        elif isinstance(key, str):
            slot = self._by_name.get(key.strip().lower())
            if slot is not None:
                return slot
        raise StructuralError(f"unknown slot {key!s}")

    def index(self, key) -> int:
        return self._index[self.resolve(key)]

    @property
    def domains(self) -> tuple[str, ...]:
        return tuple(dict.fromkeys(s.domain for s in self.slots))

    def partners(self, slot: SlotId) -> tuple[SlotId, ...]:
        out = []
        for a, b in self.correlated_pairs:
            if a == slot:
                out.append(b)
            elif b == slot:
                out.append(a)
        return tuple(out)

    def empty_state(self) -> "DialogueState":
        return DialogueState(self, (NOT_MENTIONED,) * len(self.slots))

    def state(self, values: Mapping | None = None) -> "DialogueState":
        """Totalize a partial ``{slot: value}`` mapping; missing slots are ``<nm>``."""
        return self.empty_state().with_values(values or {})


class DialogueState:
    """Immutable total map from schema slots to slot values."""

    __slots__ = ("schema", "values", "_hash")

    def __init__(self, schema: Schema, values: Iterable[str]):
        values = tuple(values)
        if len(values) != len(schema.slots):
            raise StructuralError(f"state has {len(values)} values for {len(schema.slots)} slots")
        object.__setattr__(self, "schema", schema)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "_hash", None)

    def __setattr__(self, name, value):
        raise AttributeError("DialogueState is immutable")

    def __getitem__(self, key) -> str:
        return self.values[self.schema.index(key)]

    def __iter__(self) -> Iterator[SlotId]:
        return iter(self.schema.slots)

    def __len__(self) -> int:
        return len(self.values)

    def items(self) -> Iterator[tuple[SlotId, str]]:
        return zip(self.schema.slots, self.values)

    def with_values(self, updates: Mapping) -> "DialogueState":
        if not updates:
            return self
        values = list(self.values)
        for key, raw in updates.items():
            value = normalize_value(raw)
            if not value:
                raise StructuralError(f"empty value for {key}")
            values[self.schema.index(key)] = value
        return DialogueState(self.schema, values)

    def to_dict(self) -> dict[str, str]:
        return {s.name: v for s, v in self.items()}

    def active(self) -> dict[str, str]:
        return {s.name: v for s, v in self.items() if v != NOT_MENTIONED}

    def __eq__(self, other) -> bool:
        if not isinstance(other, DialogueState):
            return NotImplemented
        return self.schema.slots == other.schema.slots and self.values == other.values

    def __hash__(self) -> int:
        if self._hash is None:
            object.__setattr__(self, "_hash", hash((self.schema.slots, self.values)))
        return self._hash

    def __repr__(self) -> str:
        return f"DialogueState({self.active()})"


@dataclass(frozen=True)
class StateDelta:
    """New values for the slots that changed between two consecutive turns."""

    changed: Mapping[SlotId, str]

    def __len__(self) -> int:
        return len(self.changed)

    def __contains__(self, slot) -> bool:
        return slot in self.changed

    def __iter__(self):
        return iter(self.changed)


class StateOperation(enum.Enum):
    CARRYOVER = "carryover"
    UPDATE = "update"
    DELETE = "delete"
    DONTCARE = "dontcare"


def _check_same_schema(a: DialogueState, b: DialogueState) -> None:
    if a.schema.slots != b.schema.slots:
        raise StructuralError("states are over different schemas")


def diff_states(prev: DialogueState, curr: DialogueState) -> StateDelta:
    _check_same_schema(prev, curr)
    return StateDelta(
        {s: c for s, p, c in zip(curr.schema.slots, prev.values, curr.values) if p != c}
    )


def apply_delta(prev: DialogueState, delta: StateDelta) -> DialogueState:
    for key in delta.changed:
        prev.schema.resolve(key)
    return prev.with_values(delta.changed)


def classify_operation(prev_value: str, curr_value: str) -> StateOperation:
    if prev_value != NOT_MENTIONED and curr_value == NOT_MENTIONED:
        return StateOperation.DELETE
    if curr_value == DONT_CARE and prev_value != DONT_CARE:
        return StateOperation.DONTCARE
    if is_literal(curr_value) and curr_value != prev_value:
        return StateOperation.UPDATE
    return StateOperation.CARRYOVER


def classify_operations(prev: DialogueState, curr: DialogueState) -> dict[SlotId, StateOperation]:
    _check_same_schema(prev, curr)
    return {
        s: classify_operation(p, c)
        for s, p, c in zip(curr.schema.slots, prev.values, curr.values)
    }


def states_equal(a: DialogueState, b: DialogueState) -> bool:
    _check_same_schema(a, b)
    return all(normalize_value(x) == normalize_value(y) for x, y in zip(a.values, b.values))
