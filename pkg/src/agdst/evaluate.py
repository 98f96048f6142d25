"""Tracking metrics, error-type statistics, prediction files and attention dumps."""

from __future__ import annotations

import enum
import json
from collections import Counter
from dataclasses import asdict, dataclass, field
from itertools import groupby
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import kernels
from .core import (
    NOT_MENTIONED,
    DialogueState,
    Schema,
    SlotId,
    StateOperation,
    StructuralError,
    classify_operation,
    is_literal,
    normalize_value,
    states_equal,
)

EDIT_RATIO_THRESHOLD = 0.34


class ErrorType(enum.Enum):
    NOT_UPDATED = "NotUpdated"
    GENERATION_MISTAKE = "GenerationMistake"
    CORRELATED_CONFUSION = "CorrelatedConfusion"
    OTHER = "Other"


@dataclass(frozen=True)
class TurnPrediction:
    dialogue_id: str
    turn: int
    gold: DialogueState
    primitive: DialogueState
    final: DialogueState
    warnings: tuple[str, ...] = ()
    corrupted: tuple[SlotId, ...] | None = None  # set only by oracle-corruption runs


@dataclass
class PredictionRun:
    schema: Schema
    turns: list[TurnPrediction]

    def __post_init__(self) -> None:
        for tp in self.turns:
            for st in (tp.gold, tp.primitive, tp.final):
                if st.schema.slots != self.schema.slots:
                    raise StructuralError(f"{tp.dialogue_id}#{tp.turn}: state over a different schema")

    def __len__(self) -> int:
        return len(self.turns)

    def dialogues(self) -> list[list[TurnPrediction]]:
        return [list(g) for _, g in groupby(self.turns, key=lambda t: t.dialogue_id)]

    def previous_gold(self) -> list[DialogueState]:
        """Gold state before each turn; turns must be numbered 0..n-1 within each dialogue."""
        out = []
        for dia in self.dialogues():
            prev = self.schema.empty_state()
            for i, tp in enumerate(dia):
                if tp.turn != i:
                    raise StructuralError(
                        f"dialogue {tp.dialogue_id}: turn {tp.turn} at position {i}; previous gold state missing"
                    )
                out.append(prev)
                prev = tp.gold
        return out


def check_alignment(run: PredictionRun, gold_records) -> None:
    """Raise unless the run covers exactly the turns of ``gold_records`` in order."""
    want = [(r.id, len(r)) for r in gold_records]
    have = [(d[0].dialogue_id, len(d)) for d in run.dialogues()]
    if want != have:
        raise StructuralError(f"prediction run does not align with gold corpus ({len(have)} vs {len(want)} dialogues)")


def _nonempty(run: PredictionRun) -> None:
    if not run.turns:
        raise StructuralError("empty prediction run")


def joint_goal_accuracy(run: PredictionRun, gold_records=None) -> float:
    _nonempty(run)
    if gold_records is not None:
        check_alignment(run, gold_records)
    return sum(states_equal(t.final, t.gold) for t in run.turns) / len(run.turns)


def slot_accuracy(run: PredictionRun, domain: str | None = None) -> float:
    _nonempty(run)
    if domain is not None and domain not in run.schema.domains:
        raise StructuralError(f"unknown domain {domain!r}")
    idx = [i for i, s in enumerate(run.schema.slots) if domain is None or s.domain == domain]
    hits = 0
    for t in run.turns:
        fv, gv = t.final.values, t.gold.values
        hits += sum(normalize_value(fv[i]) == normalize_value(gv[i]) for i in idx)
    return hits / (len(idx) * len(run.turns))


def domain_jga(run: PredictionRun, domain: str) -> float:
    """JGA restricted to one domain's slots, over all turns."""
    _nonempty(run)
    if domain not in run.schema.domains:
        raise StructuralError(f"unknown domain {domain!r}")
    idx = [i for i, s in enumerate(run.schema.slots) if s.domain == domain]
    ok = 0
    for t in run.turns:
        fv, gv = t.final.values, t.gold.values
        ok += all(normalize_value(fv[i]) == normalize_value(gv[i]) for i in idx)
    return ok / len(run.turns)


@dataclass(frozen=True)
class GateCounts:
    agree: int
    decisions: int
    true_pos: int
    predicted: int
    gold: int

    @property
    def accuracy(self) -> float:
        return self.agree / self.decisions if self.decisions else 1.0

    @property
    def f1(self) -> float:
        if self.predicted == 0 and self.gold == 0:
            return 1.0
        if self.true_pos == 0:
            return 0.0
        p = self.true_pos / self.predicted
        r = self.true_pos / self.gold
        return 2 * p * r / (p + r)

    @property
    def precision(self) -> float:
        return self.true_pos / self.predicted if self.predicted else 1.0

    @property
    def recall(self) -> float:
        return self.true_pos / self.gold if self.gold else 1.0


def update_gate_counts(run: PredictionRun) -> GateCounts:
    prevs = run.previous_gold()
    agree = decisions = tp = n_pred = n_gold = 0
    for tp_, prev in zip(run.turns, prevs):
        for p, g, f in zip(prev.values, tp_.gold.values, tp_.final.values):
            g_up = classify_operation(p, g) is StateOperation.UPDATE
            p_up = classify_operation(p, f) is StateOperation.UPDATE
            decisions += 1
            agree += g_up == p_up
            n_gold += g_up
            n_pred += p_up
            tp += g_up and p_up and normalize_value(f) == normalize_value(g)
    return GateCounts(agree, decisions, tp, n_pred, n_gold)


def update_gate_metrics(run: PredictionRun, gold_records=None) -> tuple[float, float]:
    """(gate accuracy, value F1), both measured against the gold previous state."""
    _nonempty(run)
    if gold_records is not None:
        check_alignment(run, gold_records)
    c = update_gate_counts(run)
    return c.accuracy, c.f1


def edit_ratio(a: str, b: str) -> float:
    longest = max(len(a), len(b))
    return kernels.edit_distance(a, b) / longest if longest else 0.0


def classify_slot_error(pred: str, gold: str, gold_prev: str, partner_golds: Iterable[str],
                        threshold: float = EDIT_RATIO_THRESHOLD) -> ErrorType:
    if pred == gold_prev and gold != gold_prev:
        return ErrorType.NOT_UPDATED
    if any(is_literal(v) and pred == v for v in partner_golds):
        return ErrorType.CORRELATED_CONFUSION
    if is_literal(pred) and is_literal(gold) and edit_ratio(pred, gold) <= threshold:
        return ErrorType.GENERATION_MISTAKE
    return ErrorType.OTHER


def classify_errors(run: PredictionRun, which: str = "final",
                    threshold: float = EDIT_RATIO_THRESHOLD) -> dict[str, int]:
    """One category per wrong (turn, slot) of the ``which`` state ("final" or "primitive")."""
    if which not in ("final", "primitive"):
        raise ValueError(f"which must be 'final' or 'primitive', got {which!r}")
    schema = run.schema
    partners = {s: [schema.index(p) for p in schema.partners(s)] for s in schema}
    counts = Counter({e.value: 0 for e in ErrorType})
    for tp, prev in zip(run.turns, run.previous_gold()):
        pred_state = getattr(tp, which)
        gv = tp.gold.values
        for i, slot in enumerate(schema.slots):
            pred = normalize_value(pred_state.values[i])
            gold = normalize_value(gv[i])
            if pred == gold:
                continue
            kind = classify_slot_error(pred, gold, prev.values[i], (gv[j] for j in partners[slot]), threshold)
            counts[kind.value] += 1
    return dict(counts)


def repair_rate(run: PredictionRun) -> float:
    """Fraction of corrupted slots whose final value equals gold.

    A slot counts as corrupted only when its primitive value differs from gold.
    """
    total = fixed = 0
    for tp in run.turns:
        if tp.corrupted is None:
            raise StructuralError(f"{tp.dialogue_id}#{tp.turn}: run lacks corruption records")
        for slot in tp.corrupted:
            if tp.primitive[slot] == tp.gold[slot]:
                continue
            total += 1
            fixed += tp.final[slot] == tp.gold[slot]
    return fixed / total if total else 1.0


def corrupted_slot_count(run: PredictionRun) -> int:
    return sum(
        sum(tp.primitive[s] != tp.gold[s] for s in (tp.corrupted or ()))
        for tp in run.turns
    )


@dataclass
class MetricsReport:
    jga: float
    slot_acc_overall: float
    per_domain: dict
    update_gate_acc: float
    update_value_f1: float
    repair_rate: float | None
    error_type_counts: dict
    primitive_jga: float
    n_turns: int
    edit_ratio_threshold: float = EDIT_RATIO_THRESHOLD
    error_types_of: str = "primitive"

    def to_json(self) -> dict:
        return asdict(self)

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, d: dict) -> "MetricsReport":
        return cls(**d)


def metrics_report(run: PredictionRun, gold_records=None, repair_run: PredictionRun | None = None,
                   threshold: float = EDIT_RATIO_THRESHOLD) -> MetricsReport:
    if gold_records is not None:
        check_alignment(run, gold_records)
    gate_acc, f1 = update_gate_metrics(run)
    primitive_run = PredictionRun(run.schema, [
        TurnPrediction(t.dialogue_id, t.turn, t.gold, t.primitive, t.primitive) for t in run.turns
    ])
    return MetricsReport(
        jga=joint_goal_accuracy(run),
        slot_acc_overall=slot_accuracy(run),
        per_domain={d: {"jga": domain_jga(run, d), "slot_acc": slot_accuracy(run, d)} for d in run.schema.domains},
        update_gate_acc=gate_acc,
        update_value_f1=f1,
        repair_rate=repair_rate(repair_run) if repair_run is not None else None,
        error_type_counts=classify_errors(run, "primitive", threshold),
        primitive_jga=joint_goal_accuracy(primitive_run),
        n_turns=len(run),
        edit_ratio_threshold=threshold,
    )


# ---------------------------------------------------------------- files


def _turn_json(tp: TurnPrediction) -> dict:
    obj = {
        "dialogue_id": tp.dialogue_id,
        "turn": tp.turn,
        "gold": tp.gold.to_dict(),
        "primitive": tp.primitive.to_dict(),
        "final": tp.final.to_dict(),
        "warnings": list(tp.warnings),
    }
    if tp.corrupted is not None:
        obj["corrupted"] = [s.name for s in tp.corrupted]
    return obj


def dumps_predictions(run: PredictionRun) -> str:
    return "".join(json.dumps(_turn_json(tp), ensure_ascii=False) + "\n" for tp in run.turns)


def save_predictions(path, run: PredictionRun) -> None:
    Path(path).write_text(dumps_predictions(run), encoding="utf-8")


def load_predictions(path, schema: Schema) -> PredictionRun:
    turns = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                corrupted = obj.get("corrupted")
                turns.append(TurnPrediction(
                    obj["dialogue_id"], int(obj["turn"]),
                    schema.state(obj["gold"]), schema.state(obj["primitive"]), schema.state(obj["final"]),
                    tuple(obj.get("warnings", ())),
                    None if corrupted is None else tuple(schema.resolve(s) for s in corrupted),
                ))
            except (KeyError, TypeError, ValueError) as exc:
                raise StructuralError(f"{path}:{lineno}: bad prediction line: {exc}") from exc
    return PredictionRun(schema, turns)


def attention_json(dialogue_id: str, turn: int, dump: dict) -> dict:
    """``dump`` maps pass name to ``{"tokens": [...], "layers": [array (heads, T, T)]}``."""
    passes = {}
    for name, item in dump.items():
        tokens = list(item["tokens"])
        layers = []
        for maps in item["layers"]:
            maps = np.asarray(maps, dtype=np.float64)
            if maps.shape[-1] != len(tokens) or maps.shape[-2] != len(tokens):
                raise StructuralError(f"attention map shape {maps.shape} does not match {len(tokens)} tokens")
            rows = maps.sum(axis=-1)
            if np.max(np.abs(rows - 1.0)) > 1e-5:
                raise StructuralError("attention rows do not sum to 1")
            layers.append([[[float(x) for x in row] for row in head] for head in maps])
        passes[name] = {"tokens": tokens, "layers": layers}
    return {"dialogue_id": dialogue_id, "turn": turn, "passes": passes}


def export_attention(dumps: Sequence[tuple[str, int, dict]], path) -> bytes:
    """Write one JSON document holding every (dialogue_id, turn, dump) item."""
    doc = {"format": "agdst-attention v1", "turns": [attention_json(d, t, dump) for d, t, dump in dumps]}
    data = (json.dumps(doc, separators=(",", ":")) + "\n").encode("utf-8")
    Path(path).write_bytes(data)
    return data
