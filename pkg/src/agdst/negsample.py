"""Corrupted primitive states for amending-pass training."""

from __future__ import annotations

import enum
import random
from dataclasses import dataclass, field
from typing import Iterable, Mapping

from .core import (
    DONT_CARE,
    NOT_MENTIONED,
    ConfigError,
    DialogueState,
    Schema,
    SlotId,
    diff_states,
    is_literal,
)


class Replacement(enum.Enum):
    TO_NM = "to_nm"
    TO_DC = "to_dc"
    TO_WRONG_VALUE = "to_wrong_value"


class ValueSource(enum.Enum):
    ONTOLOGY = "ontology"
    CORPUS_VALUES = "corpus_values"


DEFAULT_MIX = {Replacement.TO_NM: 0.5, Replacement.TO_DC: 0.1, Replacement.TO_WRONG_VALUE: 0.4}


@dataclass
class CorruptionPolicy:
    corrupt_prob: float = 0.5
    replacement_mix: dict = field(default_factory=lambda: dict(DEFAULT_MIX))
    wrong_value_source: ValueSource = ValueSource.ONTOLOGY
    heuristic_plus: bool = False
    swap_prob: float = 0.5
    rng_seed: int = 0

    def __post_init__(self) -> None:
        self.wrong_value_source = ValueSource(self.wrong_value_source)
        mix = {Replacement(k): float(v) for k, v in dict(self.replacement_mix).items()}
        for kind in Replacement:
            mix.setdefault(kind, 0.0)
        self.replacement_mix = {k: mix[k] for k in Replacement}
        for name, p in [("corrupt_prob", self.corrupt_prob), ("swap_prob", self.swap_prob), *((k.value, v) for k, v in mix.items())]:
            if not 0.0 <= p <= 1.0:
                raise ConfigError(f"{name} must be in [0, 1], got {p}")
        if abs(sum(mix.values()) - 1.0) > 1e-9:
            raise ConfigError(f"replacement_mix must sum to 1, got {sum(mix.values())}")

    def to_json(self) -> dict:
        return {
            "corrupt_prob": self.corrupt_prob,
            "replacement_mix": {k.value: v for k, v in self.replacement_mix.items()},
            "wrong_value_source": self.wrong_value_source.value,
            "heuristic_plus": self.heuristic_plus,
            "swap_prob": self.swap_prob,
            "rng_seed": self.rng_seed,
        }

    @classmethod
    def from_json(cls, d: Mapping) -> "CorruptionPolicy":
        known = {"corrupt_prob", "replacement_mix", "wrong_value_source", "heuristic_plus", "swap_prob", "rng_seed"}
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown corruption policy keys: {sorted(extra)}")
        return cls(**d)


def value_pool(schema: Schema, policy: CorruptionPolicy,
               corpus_states: Iterable[DialogueState] = ()) -> dict[SlotId, tuple[str, ...]]:
    """Candidate wrong values per slot from the configured source."""
    if policy.wrong_value_source is ValueSource.ONTOLOGY:
        pool = {s: tuple(schema.ontology.get(s, ())) for s in schema}
    else:
        seen: dict[SlotId, dict[str, None]] = {s: {} for s in schema}
        for state in corpus_states:
            for slot, value in state.items():
                if is_literal(value):
                    seen[slot][value] = None
        pool = {s: tuple(v) for s, v in seen.items()}
    if policy.replacement_mix[Replacement.TO_WRONG_VALUE] > 0 and not any(pool.values()):
        raise ConfigError(f"no wrong values available from source {policy.wrong_value_source.value}")
    return pool


def _replace(kind: Replacement, slot: SlotId, gold: str, pool, rng: random.Random) -> str:
    if kind is Replacement.TO_NM:
        return NOT_MENTIONED
    if kind is Replacement.TO_DC:
        return DONT_CARE
    candidates = [v for v in pool.get(slot, ()) if v != gold]
    if not candidates:
        return NOT_MENTIONED
    return rng.choice(candidates)


def corrupt_logged(gold_prev: DialogueState, gold_curr: DialogueState, schema: Schema,
                   policy: CorruptionPolicy, rng: random.Random, pool=None):
    """Like :func:`corrupt`, also returning ``[(slot, replacement kind)]`` for fired corruptions."""
    if pool is None:
        pool = value_pool(schema, policy) if policy.wrong_value_source is ValueSource.ONTOLOGY else {}
    delta = diff_states(gold_prev, gold_curr)
    kinds = list(policy.replacement_mix)
    weights = list(policy.replacement_mix.values())
    updates, fired = {}, []
    for slot in schema:  # schema order keeps rng consumption deterministic
        if slot not in delta:
            continue
        if rng.random() >= policy.corrupt_prob:
            continue
        kind = rng.choices(kinds, weights)[0]
        updates[slot] = _replace(kind, slot, gold_curr[slot], pool, rng)
        fired.append((slot, kind))
    return gold_curr.with_values(updates) if updates else gold_curr, fired


def corrupt(gold_prev: DialogueState, gold_curr: DialogueState, schema: Schema,
            policy: CorruptionPolicy, rng: random.Random, pool=None) -> DialogueState:
    """Start from ``gold_curr`` and corrupt each changed slot with probability ``corrupt_prob``."""
    return corrupt_logged(gold_prev, gold_curr, schema, policy, rng, pool)[0]


def heuristic_swap(state: DialogueState, schema: Schema, policy: CorruptionPolicy,
                   rng: random.Random) -> DialogueState:
    """Exchange the values of each correlated pair with probability ``swap_prob``."""
    updates = {}
    for a, b in schema.correlated_pairs:
        if a not in schema or b not in schema:
            raise ConfigError(f"correlated pair ({a}, {b}) names an unknown slot")
        va, vb = updates.get(a, state[a]), updates.get(b, state[b])
        if va == NOT_MENTIONED and vb == NOT_MENTIONED:
            continue
        if rng.random() < policy.swap_prob:
            updates[a], updates[b] = vb, va
    return state.with_values(updates) if updates else state


def primitive(gold_prev: DialogueState, gold_curr: DialogueState, schema: Schema,
              policy: CorruptionPolicy, rng: random.Random, pool=None) -> DialogueState:
    """Training primitive: corruption, then the correlated swap when ``heuristic_plus`` is set."""
    state = corrupt(gold_prev, gold_curr, schema, policy, rng, pool)
    if policy.heuristic_plus:
        state = heuristic_swap(state, schema, policy, rng)
    return state
