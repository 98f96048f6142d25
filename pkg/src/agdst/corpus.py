"""Corpus ingestion, the canonical JSON interchange format, and a synthetic generator."""

from __future__ import annotations

import hashlib
import json
import logging
import random
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .core import (
    DONT_CARE,
    NOT_MENTIONED,
    DialogueState,
    Schema,
    SlotId,
    StructuralError,
    diff_states,
    is_literal,
    normalize_text,
    normalize_value,
)
from .linearize import Turn

log = logging.getLogger(__name__)

MULTIWOZ_DOMAINS = ("attraction", "hotel", "restaurant", "taxi", "train")
WOZ_SLOTS = ("restaurant-area", "restaurant-food", "restaurant-pricerange")


class CorpusError(ValueError):
    pass


@dataclass(frozen=True)
class DialogueRecord:
    id: str
    turns: tuple[tuple[Turn, DialogueState], ...]
    split: str | None = None

    def __post_init__(self) -> None:
        if not self.turns:
            raise CorpusError(f"dialogue {self.id}: no turns")
        slots = self.turns[0][1].schema.slots
        if any(s.schema.slots != slots for _, s in self.turns):
            raise CorpusError(f"dialogue {self.id}: states over different schemas")

    @property
    def schema(self) -> Schema:
        return self.turns[0][1].schema

    @property
    def states(self) -> list[DialogueState]:
        return [s for _, s in self.turns]

    def __len__(self) -> int:
        return len(self.turns)


# ---------------------------------------------------------------- json format


def schema_to_json(schema: Schema) -> dict:
    return {
        "slots": [{"domain": s.domain, "slot": s.slot} for s in schema.slots],
        "ontology": {s.name: list(v) for s, v in schema.ontology.items()},
        "correlated_pairs": [[a.name, b.name] for a, b in schema.correlated_pairs],
    }


def schema_from_json(obj: Mapping) -> Schema:
    try:
        slots = tuple(SlotId(normalize_text(s["domain"]), normalize_text(s["slot"]).replace(" ", "")) for s in obj["slots"])
    except (KeyError, TypeError) as exc:
        raise CorpusError(f"malformed schema block: {exc}") from None
    return Schema(slots, obj.get("ontology", {}), tuple(tuple(p) for p in obj.get("correlated_pairs", ())))


def records_to_json(schema: Schema, records: Iterable[DialogueRecord]) -> dict:
    dialogues = []
    for rec in records:
        turns = []
        for turn, state in rec.turns:
            item = {
                "system": turn.system,
                "user": turn.user,
                "name_spans": [list(s) for s in turn.system_spans],
            }
            if turn.user_spans:
                item["user_name_spans"] = [list(s) for s in turn.user_spans]
            item["state"] = state.active()
            turns.append(item)
        d = {"id": rec.id, "turns": turns}
        if rec.split:
            d["split"] = rec.split
        dialogues.append(d)
    return {"schema": schema_to_json(schema), "dialogues": dialogues}


def dump_corpus(path, schema: Schema, records: Sequence[DialogueRecord]) -> bytes:
    data = json.dumps(records_to_json(schema, records), indent=1, ensure_ascii=False, sort_keys=False)
    raw = (data + "\n").encode("utf-8")
    Path(path).write_bytes(raw)
    return raw


def corpus_hash(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _read_json(path) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise CorpusError(f"{path}: malformed JSON ({exc})") from None


def _parse_dialogue(path, raw: Mapping, schema: Schema, slot_alias=None) -> DialogueRecord:
    rid = raw.get("id", "?")
    try:
        turns = []
        for k, t in enumerate(raw["turns"]):
            system = t.get("system", "") or ""
            user = t["user"]
            spans = tuple(tuple(s) for s in t.get("name_spans", ()))
            uspans = tuple(tuple(s) for s in t.get("user_name_spans", ()))
            if spans or uspans:
                # lowercasing in place keeps character offsets valid
                system, user = system.lower(), user.lower()
            else:
                system, user = normalize_text(system), normalize_text(user)
            values = {}
            for key, value in (t.get("state") or {}).items():
                name = slot_alias(key) if slot_alias else key
                if name not in schema:
                    raise CorpusError(f"{path}: dialogue {rid} turn {k}: unknown slot {key!r}")
                values[name] = value
            state = schema.state(values)
            turns.append((Turn(system, user, spans, uspans), state))
    except (KeyError, TypeError, StructuralError) as exc:
        raise CorpusError(f"{path}: dialogue {rid}: {exc}") from None
    return DialogueRecord(str(rid), tuple(turns), raw.get("split"))


def load_corpus(path) -> tuple[Schema, list[DialogueRecord]]:
    """Read a corpus in the canonical interchange format."""
    data = _read_json(path)
    if "schema" not in data or "dialogues" not in data:
        raise CorpusError(f"{path}: expected top-level 'schema' and 'dialogues'")
    schema = schema_from_json(data["schema"])
    return schema, [_parse_dialogue(path, d, schema) for d in data["dialogues"]]


def load_multiwoz_like(path, domains: Sequence[str] = MULTIWOZ_DOMAINS) -> tuple[Schema, list[DialogueRecord]]:
    """MultiWOZ-2.2-style corpus restricted to ``domains``.

    Dialogues whose states touch any other domain (hospital, police) are
    dropped.  A slot that belongs neither to the schema nor to a dropped
    domain is an error.
    """
    data = _read_json(path)
    full = schema_from_json(data["schema"])
    kept = [s for s in full.slots if s.domain in domains]
    if not kept:
        raise CorpusError(f"{path}: no slots in domains {list(domains)}")
    onto = {s: v for s, v in full.ontology.items() if s.domain in domains}
    pairs = [p for p in full.correlated_pairs if p[0].domain in domains and p[1].domain in domains]
    schema = Schema(tuple(kept), onto, tuple(pairs))

    records, dropped = [], 0
    for raw in data["dialogues"]:
        if _touches_other_domain(raw, domains):
            dropped += 1
            continue
        records.append(_parse_dialogue(path, raw, schema))
    if dropped:
        log.info("%s: dropped %d dialogues outside domains %s", path, dropped, ",".join(domains))
    return schema, records


def _touches_other_domain(raw: Mapping, domains: Sequence[str]) -> bool:
    for d in raw.get("domains", ()):
        if d not in domains:
            return True
    for t in raw.get("turns", ()):
        for key, value in (t.get("state") or {}).items():
            domain = key.split("-", 1)[0].strip().lower()
            if domain not in domains and normalize_value(str(value)) != NOT_MENTIONED:
                return True
    return False


def load_woz_like(path) -> tuple[Schema, list[DialogueRecord]]:
    """WOZ-2.0-style corpus over the fixed three-slot restaurant schema."""
    data = _read_json(path)
    onto = {}
    if "schema" in data:
        onto = {k: v for k, v in data["schema"].get("ontology", {}).items() if k in WOZ_SLOTS}
    schema = Schema.from_names(WOZ_SLOTS, onto)

    def alias(key: str) -> str:
        key = key.strip().lower().replace(" ", "")
        return key if key.startswith("restaurant-") else f"restaurant-{key}"

    return schema, [_parse_dialogue(path, d, schema, alias) for d in data["dialogues"]]


def split(records: Sequence[DialogueRecord], ratios=(0.8, 0.1, 0.1), seed: int = 0):
    """Seeded shuffle of dialogue ids cut into ``len(ratios)`` disjoint parts."""
    if any(r <= 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"split ratios must be positive and sum to 1, got {ratios}")
    k = len(ratios)
    n = len(records)
    if n < k:
        raise CorpusError(f"cannot split {n} records into {k} parts")
    ordered = sorted(records, key=lambda r: r.id)
    random.Random(seed).shuffle(ordered)
    sizes, acc, prev = [], 0.0, 0
    for r in ratios:
        acc += r
        cut = round(n * acc)
        sizes.append(cut - prev)
        prev = cut
    sizes[-1] += n - sum(sizes)
    for i in range(k):
        while sizes[i] < 1:
            j = max(range(k), key=lambda m: sizes[m])
            sizes[j] -= 1
            sizes[i] += 1
    out, start = [], 0
    for size in sizes:
        out.append(ordered[start:start + size])
        start += size
    return tuple(out)


def predefined_split(records: Sequence[DialogueRecord]):
    """Partition by the records' own ``split`` tags (train/valid/test)."""
    parts = {"train": [], "valid": [], "test": []}
    for rec in records:
        tag = {"dev": "valid", "val": "valid"}.get(rec.split, rec.split)
        if tag not in parts:
            raise CorpusError(f"dialogue {rec.id}: no usable split tag ({rec.split!r})")
        parts[tag].append(rec)
    return parts["train"], parts["valid"], parts["test"]


# ---------------------------------------------------------------- synthetic

FLOWS = ("inform", "update", "delete", "dontcare", "correlated-confusion", "coreference")

DEFAULT_ONTOLOGY = {
    "restaurant-food": [
        "chinese", "indian", "italian", "thai", "british", "french", "modern european", "south indian",
    ],
    "restaurant-area": ["centre", "north", "south", "east", "west", "northeast", "northwest", "riverside"],
    "restaurant-name": [
        "golden wok", "pizza hut", "curry garden", "the cambridge chop house",
        "kohinoor", "taj tandoori", "caffe uno", "clowns",
    ],
    "taxi-departure": [
        "wandlebury country park", "kettles yard", "camboats", "byard art",
        "cafe jello gallery", "bridge guest house", "eraina", "primavera",
    ],
    "taxi-destination": [
        "wandlebury country park", "kettles yard", "camboats", "byard art",
        "cafe jello gallery", "bridge guest house", "eraina", "primavera",
    ],
    "taxi-leaveat": ["10:15", "11:45", "16:15", "17:45", "18:15", "09:30", "13:00", "20:00"],
}

DEFAULT_TEMPLATES = {
    "restaurant-food": {
        "phrase": "food type",
        "inform": ["i am looking for {value} food", "i would like a restaurant serving {value} food",
                   "can you find me a place that serves {value} food"],
        "update": ["a change in plans , i want {value} food instead", "sorry , i would rather have {value} food"],
        "request": ["what type of food would you like ?"],
        "confirm": ["you want {value} food , is that right ?"],
    },
    "restaurant-area": {
        "phrase": "area",
        "inform": ["it should be in the {value}", "i want something in the {value} of town"],
        "update": ["actually , i prefer the {value} of town", "can we change the area to the {value} ?"],
        "request": ["which part of town do you prefer ?"],
        "confirm": ["so you would like the {value} part of town ?"],
    },
    "restaurant-name": {
        "phrase": "restaurant name",
        "entity": True,
        "inform": ["i want to book a table at {value}", "please tell me about {value}"],
        "update": ["i changed my mind , book {value} instead", "actually i prefer {value}"],
        "offer": ["i recommend {value} , it is very popular .", "{value} is a great choice . shall i book it ?"],
        "accept": ["yes , that sounds good .", "great , i will take it ."],
        "request": ["do you have a restaurant in mind ?"],
        "confirm": ["you are interested in {value} , correct ?"],
    },
    "taxi-departure": {
        "phrase": "departure",
        "entity": True,
        "inform": ["i need a taxi leaving from {value}", "please pick me up at {value}"],
        "update": ["sorry , the pick up should be at {value} instead", "actually i will be leaving from {value}"],
        "request": ["where will you be leaving from ?"],
        "confirm": ["the taxi will pick you up at {value} ."],
    },
    "taxi-destination": {
        "phrase": "destination",
        "entity": True,
        "inform": ["i need a taxi to {value}", "i want to get to {value}"],
        "update": ["sorry , i need to go to {value} instead", "please change the destination to {value}"],
        "request": ["where are you heading to ?"],
        "confirm": ["the taxi will take you to {value} ."],
    },
    "taxi-leaveat": {
        "phrase": "departure time",
        "inform": ["i want to leave at {value}", "the taxi should come at {value}"],
        "update": ["i made a mistake , i need to leave at {value}", "please change the time to {value}"],
        "request": ["what time do you want to leave ?"],
        "confirm": ["you want to leave at {value} ?"],
    },
}

GENERIC_TEMPLATES = {
    "inform": ["i want the {phrase} to be {value}"],
    "update": ["please change the {phrase} to {value}"],
    "request": ["what {phrase} would you like ?"],
    "confirm": ["the {phrase} is {value} , right ?"],
}
DELETE_TEMPLATES = ["please forget about the {phrase} , i have not decided yet", "remove the {phrase} from my request"]
DONTCARE_TEMPLATES = ["the {phrase} does not matter", "i do not care about the {phrase}"]
PAIR_TEMPLATES = [
    ("ab", "i need a ride from {a} to {b}"),
    ("ba", "i need a ride to {b} from {a}"),
    ("ba", "i want to go to {b} , leaving from {a}"),
    ("ab", "pick me up at {a} and take me to {b}"),
]
GENERIC_PAIR_TEMPLATES = [
    ("ab", "the {phrase_a} is {a} and the {phrase_b} is {b}"),
    ("ba", "the {phrase_b} is {b} and the {phrase_a} is {a}"),
]
SYSTEM_FILLERS = ["what else can i help you with ?", "okay , noted .", "is there anything else ?", "sure , let me check ."]

DEFAULT_COREFERENCE = (
    ("taxi-departure", "restaurant-name", "i need a taxi from the restaurant"),
    ("taxi-destination", "restaurant-name", "i need a taxi to the restaurant"),
)
DEFAULT_FLOW_MIX = {
    "inform": 0.45,
    "update": 0.15,
    "delete": 0.08,
    "dontcare": 0.08,
    "correlated-confusion": 0.12,
    "coreference": 0.12,
}


@dataclass
class SyntheticSpec:
    schema: Schema
    templates: dict = field(default_factory=dict)
    flow_mix: dict = field(default_factory=lambda: dict(DEFAULT_FLOW_MIX))
    rng_seed: int = 7
    dialogue_count: int = 400
    turns_per_dialogue: tuple[int, int] = (3, 7)
    coreference: tuple[tuple[str, str, str], ...] = ()

    def __post_init__(self) -> None:
        unknown = set(self.flow_mix) - set(FLOWS)
        if unknown:
            raise ValueError(f"unknown flows {sorted(unknown)}")
        if any(p < 0 for p in self.flow_mix.values()) or abs(sum(self.flow_mix.values()) - 1.0) > 1e-6:
            raise ValueError("flow_mix must be non-negative and sum to 1")
        lo, hi = self.turns_per_dialogue
        if not 1 <= lo <= hi:
            raise ValueError(f"bad turns_per_dialogue {self.turns_per_dialogue}")
        for slot in self.schema.slots:
            if not self.schema.ontology.get(slot):
                raise ValueError(f"slot {slot} has no ontology values to generate from")
        for target, source, _ in self.coreference:
            self.schema.resolve(target)
            self.schema.resolve(source)

    def slot_templates(self, slot: SlotId) -> dict:
        tpl = dict(GENERIC_TEMPLATES)
        tpl["phrase"] = slot.slot
        tpl.update(self.templates.get(slot.name, {}))
        return tpl

    @classmethod
    def from_json(cls, obj: Mapping) -> "SyntheticSpec":
        default = default_synthetic_spec()
        schema = schema_from_json(obj["schema"]) if "schema" in obj else default.schema
        templates = obj.get("templates", DEFAULT_TEMPLATES if "schema" not in obj else {})
        coref = obj.get("coreference", DEFAULT_COREFERENCE if "schema" not in obj else ())
        return cls(
            schema=schema,
            templates=templates,
            flow_mix=obj.get("flow_mix", dict(DEFAULT_FLOW_MIX)),
            rng_seed=int(obj.get("rng_seed", 7)),
            dialogue_count=int(obj.get("dialogue_count", 400)),
            turns_per_dialogue=tuple(obj.get("turns_per_dialogue", (3, 7))),
            coreference=tuple(tuple(c) for c in coref),
        )


def default_schema() -> Schema:
    return Schema.from_names(
        DEFAULT_ONTOLOGY, DEFAULT_ONTOLOGY, [("taxi-departure", "taxi-destination")]
    )


def default_synthetic_spec(**overrides) -> SyntheticSpec:
    kwargs = dict(
        schema=default_schema(),
        templates=DEFAULT_TEMPLATES,
        coreference=DEFAULT_COREFERENCE,
    )
    kwargs.update(overrides)
    return SyntheticSpec(**kwargs)


_FIELD = re.compile(r"\{(\w+)\}")


def _fill(template: str, values: Mapping[str, str], entity_fields=()) -> tuple[str, list[tuple[int, int]]]:
    """Substitute ``{field}`` placeholders, returning text and spans of entity fields."""
    out, spans, pos = [], [], 0
    length = 0
    for m in _FIELD.finditer(template):
        chunk = template[pos:m.start()]
        out.append(chunk)
        length += len(chunk)
        val = values[m.group(1)]
        if m.group(1) in entity_fields:
            spans.append((length, length + len(val)))
        out.append(val)
        length += len(val)
        pos = m.end()
    out.append(template[pos:])
    return "".join(out), spans


def _join(parts: list[tuple[str, list]]) -> tuple[str, list]:
    text, spans = "", []
    for i, (t, s) in enumerate(parts):
        if i:
            text += " and "
        off = len(text)
        spans += [(a + off, b + off) for a, b in s]
        text += t
    return text, spans


class _DialogueScript:
    """Draws one scripted dialogue; every turn's delta is recorded for checking."""

    def __init__(self, spec: SyntheticSpec, rng: random.Random):
        self.spec = spec
        self.schema = spec.schema
        self.rng = rng
        self.state = self.schema.empty_state()
        self.pairs = list(self.schema.correlated_pairs)
        self.coref = [
            (self.schema.resolve(t), self.schema.resolve(s), tpl) for t, s, tpl in spec.coreference
        ]

    def _tpl(self, slot: SlotId, kind: str) -> list[str]:
        return self.spec.slot_templates(slot).get(kind) or []

    def _is_entity(self, slot: SlotId) -> bool:
        return bool(self.spec.slot_templates(slot).get("entity"))

    def _fill_slot(self, slot: SlotId, kind: str, value: str, pool=None):
        tpl = self.rng.choice(pool or self._tpl(slot, kind))
        fields = {"value": value, "phrase": self.spec.slot_templates(slot)["phrase"]}
        return _fill(tpl, fields, ("value",) if self._is_entity(slot) else ())

    def _new_value(self, slot: SlotId, avoid=()) -> str | None:
        options = [v for v in self.schema.ontology[slot] if v not in avoid]
        return self.rng.choice(options) if options else None

    def _system_filler(self, first: bool):
        if first:
            return "", []
        rng = self.rng
        r = rng.random()
        unset = [s for s, v in self.state.items() if v == NOT_MENTIONED]
        active = [s for s, v in self.state.items() if is_literal(v)]
        if r < 0.35 and unset:
            return self._fill_slot(rng.choice(unset), "request", "")
        if r < 0.6 and active:
            slot = rng.choice(active)
            return self._fill_slot(slot, "confirm", self.state[slot])
        return rng.choice(SYSTEM_FILLERS), []

    # each flow returns (system, system_spans, user, user_spans, delta) or None

    def inform(self, first):
        rng = self.rng
        unset = [s for s, v in self.state.items() if v == NOT_MENTIONED]
        if not unset:
            return None
        k = 2 if len(unset) > 1 and rng.random() < 0.35 else 1
        slots = sorted(rng.sample(unset, k), key=self.schema.index)
        delta = {}
        for slot in slots:
            avoid = {v for p in self.schema.partners(slot) for v in [self.state[p], delta.get(p)] if v}
            value = self._new_value(slot, avoid)
            if value is None:
                return None
            delta[slot] = value
        if k == 1 and not first and self._tpl(slots[0], "offer") and rng.random() < 0.5:
            slot = slots[0]
            system, sspans = self._fill_slot(slot, "offer", delta[slot])
            user = rng.choice(self._tpl(slot, "accept"))
            return system, sspans, user, [], delta
        system, sspans = self._system_filler(first)
        user, uspans = _join([self._fill_slot(s, "inform", delta[s]) for s in slots])
        return system, sspans, user, uspans, delta

    def update(self, first):
        active = [s for s, v in self.state.items() if is_literal(v)]
        if not active:
            return None
        slot = self.rng.choice(active)
        avoid = {self.state[slot]} | {self.state[p] for p in self.schema.partners(slot)}
        value = self._new_value(slot, avoid)
        if value is None:
            return None
        if self.rng.random() < 0.5:
            system, sspans = self._fill_slot(slot, "confirm", self.state[slot])
        else:
            system, sspans = self._system_filler(first)
        user, uspans = self._fill_slot(slot, "update", value)
        if system and system.endswith("?") and self.rng.random() < 0.5:
            user, uspans = "no , " + user, [(a + 5, b + 5) for a, b in uspans]
        return system, sspans, user, uspans, {slot: value}

    def delete(self, first):
        active = [s for s, v in self.state.items() if is_literal(v)]
        if not active:
            return None
        slot = self.rng.choice(active)
        system, sspans = self._system_filler(first)
        user, _ = self._fill_slot(slot, "delete", "", DELETE_TEMPLATES)
        return system, sspans, user, [], {slot: NOT_MENTIONED}

    def dontcare(self, first):
        candidates = [s for s, v in self.state.items() if v != DONT_CARE and not self._is_entity(s)]
        if not candidates:
            return None
        slot = self.rng.choice(candidates)
        if self.state[slot] == NOT_MENTIONED and self._tpl(slot, "request") and not first and self.rng.random() < 0.6:
            system, sspans = self._fill_slot(slot, "request", "")
        else:
            system, sspans = self._system_filler(first)
        user, _ = self._fill_slot(slot, "dontcare", "", DONTCARE_TEMPLATES)
        return system, sspans, user, [], {slot: DONT_CARE}

    def correlated(self, first):
        if not self.pairs:
            return None
        a, b = self.rng.choice(self.pairs)
        va = self._new_value(a, {self.state[a]})
        vb = self._new_value(b, {self.state[b], va})
        if va is None or vb is None:
            return None
        custom = a.domain == b.domain == "taxi"
        pool = PAIR_TEMPLATES if custom else GENERIC_PAIR_TEMPLATES
        _, tpl = self.rng.choice(pool)
        fields = {
            "a": va, "b": vb,
            "phrase_a": self.spec.slot_templates(a)["phrase"],
            "phrase_b": self.spec.slot_templates(b)["phrase"],
        }
        ents = tuple(f for f, s in (("a", a), ("b", b)) if self._is_entity(s))
        user, uspans = _fill(tpl, fields, ents)
        system, sspans = self._system_filler(first)
        return system, sspans, user, uspans, {a: va, b: vb}

    def coreference(self, first):
        options = []
        for target, source, tpl in self.coref:
            src = self.state[source]
            if not is_literal(src) or self.state[target] == src:
                continue
            if any(self.state[p] == src for p in self.schema.partners(target)):
                continue
            options.append((target, src, tpl))
        if not options:
            return None
        target, value, tpl = self.rng.choice(options)
        system, sspans = self._system_filler(first)
        return system, sspans, tpl, [], {target: value}

    def step(self, first: bool):
        handlers = {
            "inform": self.inform,
            "update": self.update,
            "delete": self.delete,
            "dontcare": self.dontcare,
            "correlated-confusion": self.correlated,
            "coreference": self.coreference,
        }
        weights = {f: p for f, p in self.spec.flow_mix.items() if p > 0}
        while weights:
            names = sorted(weights)
            flow = self.rng.choices(names, [weights[n] for n in names])[0]
            out = handlers[flow](first)
            if out is not None:
                return flow, out
            del weights[flow]  # unsatisfiable here, redraw among the rest
        return None


def generate_scripted(spec: SyntheticSpec) -> list[tuple[DialogueRecord, list[tuple[str, dict]]]]:
    """Like :func:`generate_synthetic`, also returning each turn's (flow, scripted delta)."""
    rng = random.Random(spec.rng_seed)
    out = []
    lo, hi = spec.turns_per_dialogue
    for i in range(spec.dialogue_count):
        script = _DialogueScript(spec, rng)
        turns, log_ = [], []
        for t in range(rng.randint(lo, hi)):
            drawn = script.step(first=(t == 0))
            if drawn is None:
                break
            flow, (system, sspans, user, uspans, delta) = drawn
            new_state = script.state.with_values(delta)
            if len(diff_states(script.state, new_state)) != len(delta):
                raise AssertionError(f"flow {flow} produced a no-op change")
            turns.append((Turn(system, user, tuple(sspans), tuple(uspans)), new_state))
            log_.append((flow, {s: normalize_value(v) for s, v in delta.items()}))
            script.state = new_state
        if turns:
            out.append((DialogueRecord(f"syn-{i:05d}", tuple(turns)), log_))
    return out


def generate_synthetic(spec: SyntheticSpec) -> list[DialogueRecord]:
    """Deterministic scripted dialogues over ``spec.schema``."""
    return [rec for rec, _ in generate_scripted(spec)]


def corpus_text(records: Iterable[DialogueRecord]) -> Iterable[str]:
    """Utterances plus literal gold values, the text a vocabulary is built from."""
    for rec in records:
        for turn, state in rec.turns:
            yield turn.system
            yield turn.user
            yield " ".join(v for v in state.values if is_literal(v))


def ontology_text(schema: Schema) -> list[str]:
    """Every ontology value; wrong-value corruption can emit any of them."""
    return [v for values in schema.ontology.values() for v in values]
