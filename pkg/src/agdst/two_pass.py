"""Two-pass tracker: basic generation, amending generation, training and inference loops."""

from __future__ import annotations

import enum
import hashlib
import json
import logging
import random
from dataclasses import dataclass, field, fields
from typing import Callable, Sequence

import numpy as np

from . import negsample
from .core import ConfigError, DialogueState, Schema
from .corpus import DialogueRecord
from .evaluate import PredictionRun, TurnPrediction, joint_goal_accuracy
from .linearize import (
    ContextMode,
    LayoutConfig,
    PassKind,
    TaggedSequence,
    Turn,
    append_target,
    build_pass_input,
    parse_state,
)
from .negsample import CorruptionPolicy
from .neural import (
    Adam,
    EmbeddingMode,
    ModelConfig,
    NumericError,
    Schedule,
    checkpoint,
    clip_grads,
    forward,
    greedy_decode,
    init_params,
    loss_and_grads,
    make_batch,
)
from .vocab import PAD, Vocabulary

log = logging.getLogger(__name__)


class NegativeSampling(enum.Enum):
    OFF = "off"
    NS = "ns"
    NS_PLUS = "ns_plus"


_MODEL_KEYS = {"layers", "heads", "hidden", "ffn_multiplier", "max_positions", "dropout", "init_std"}


@dataclass
class RunConfig:
    context_mode: ContextMode = ContextMode.CURRENT_TURN
    state_memory: bool = True
    amending_enabled: bool = True
    negative_sampling: NegativeSampling = NegativeSampling.NS
    token_toggles: frozenset = frozenset()
    embedding_mode: EmbeddingMode = EmbeddingMode.TOKEN_POSITION_ROLE_SEGMENT
    model: dict = field(default_factory=dict)
    corruption: CorruptionPolicy = field(default_factory=CorruptionPolicy)
    epochs: int = 30
    patience: int = 5
    batch_size: int = 16
    token_budget: int | None = None
    base_lr: float = 5e-3
    warmup_steps: int = 100
    decay_rate: float = 0.2
    grad_clip: float = 1.0
    max_input_len: int = 224
    max_decode: int = 64
    target_jga: float | None = None  # stop once validation JGA reaches this
    seed: int = 0
    gold_conditioning: bool = False  # debugging only: condition on gold previous states

    def __post_init__(self) -> None:
        self.context_mode = ContextMode(self.context_mode)
        self.negative_sampling = NegativeSampling(self.negative_sampling)
        self.embedding_mode = EmbeddingMode(self.embedding_mode)
        self.token_toggles = frozenset(self.token_toggles)
        if isinstance(self.corruption, dict):
            self.corruption = CorruptionPolicy.from_json(self.corruption)
        unknown = set(self.model) - _MODEL_KEYS
        if unknown:
            raise ConfigError(f"unknown model keys {sorted(unknown)}")
        if not self.amending_enabled:
            self.negative_sampling = NegativeSampling.OFF
        if self.epochs < 1 or self.batch_size < 1 or self.patience < 0:
            raise ConfigError("epochs and batch_size must be positive, patience non-negative")
        self.layout  # validates toggles
        if self.negative_sampling is NegativeSampling.NS_PLUS:
            self.corruption.heuristic_plus = True

    @property
    def layout(self) -> LayoutConfig:
        try:
            return LayoutConfig(self.token_toggles, self.context_mode, self.state_memory, self.max_input_len)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def check_schema(self, schema: Schema) -> None:
        if self.negative_sampling is NegativeSampling.NS_PLUS and not schema.correlated_pairs:
            raise ConfigError("NS+ needs correlated slot pairs in the schema")

    def model_config(self, vocab_size: int) -> ModelConfig:
        return ModelConfig(vocab_size=vocab_size, embedding_mode=self.embedding_mode, seed=self.seed, **self.model)

    def to_json(self) -> dict:
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, enum.Enum):
                v = v.value
            elif isinstance(v, frozenset):
                v = sorted(v)
            elif isinstance(v, CorruptionPolicy):
                v = v.to_json()
            out[f.name] = v
        return out

    @classmethod
    def from_json(cls, d: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown run config keys {sorted(extra)}")
        try:
            return cls(**d)
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc

    def hash(self) -> str:
        return hashlib.sha256(json.dumps(self.to_json(), sort_keys=True).encode()).hexdigest()


@dataclass
class TrackerOutput:
    primitive_state: DialogueState
    amended_state: DialogueState | None
    basic_warnings: tuple[str, ...] = ()
    amend_warnings: tuple[str, ...] = ()
    attention: dict | None = None

    @property
    def final_state(self) -> DialogueState:
        return self.amended_state if self.amended_state is not None else self.primitive_state


@dataclass(frozen=True)
class TurnExample:
    dialogue_id: str
    index: int
    turn: Turn
    history: tuple[Turn, ...]
    gold_prev: DialogueState
    gold_curr: DialogueState


def turn_examples(records: Sequence[DialogueRecord]) -> list[TurnExample]:
    out = []
    for rec in records:
        prev = rec.schema.empty_state()
        history: list[Turn] = []
        for i, (turn, gold) in enumerate(rec.turns):
            out.append(TurnExample(rec.id, i, turn, tuple(history), prev, gold))
            history.append(turn)
            prev = gold
    return out


class Tracker:
    """Schema, vocabulary, run configuration and the single shared parameter set."""

    def __init__(self, schema: Schema, vocab: Vocabulary, config: RunConfig,
                 model_config: ModelConfig | None = None, params=None):
        config.check_schema(schema)
        self.schema = schema
        self.vocab = vocab
        self.config = config
        self.layout = config.layout
        self.model_config = model_config or config.model_config(len(vocab))
        if self.model_config.vocab_size != len(vocab):
            raise ConfigError(f"model vocab size {self.model_config.vocab_size} != vocabulary size {len(vocab)}")
        self.params = params if params is not None else init_params(self.model_config)
        self.stop_id = vocab.id(self.layout.stop_token)
        self.pad_id = vocab.id(PAD)

    # -- inputs

    def pass_input(self, kind: PassKind, turn: Turn, state: DialogueState, history=()) -> TaggedSequence:
        return build_pass_input(kind, turn, state, self.schema, self.vocab, self.layout, history)

    def training_sequence(self, kind: PassKind, ex: TurnExample, conditioning: DialogueState) -> TaggedSequence:
        seq = self.pass_input(kind, ex.turn, conditioning, ex.history)
        seq = append_target(seq, ex.gold_curr, self.schema, self.vocab, self.layout)
        if len(seq) > self.model_config.max_positions:
            raise ConfigError(f"sequence length {len(seq)} exceeds max_positions {self.model_config.max_positions}")
        return seq

    # -- decoding

    def decode(self, seq: TaggedSequence) -> list[int]:
        return greedy_decode(seq, self.params, self.model_config, self.stop_id, self.config.max_decode)

    def run_pass(self, seq: TaggedSequence, fallback: DialogueState, capture: bool = False):
        ids = self.decode(seq)
        tokens = self.vocab.decode(ids)
        state, warnings = parse_state(tokens, self.schema, fallback)
        if ids and ids[-1] != self.stop_id:
            warnings.append(f"decode hit max_new {self.config.max_decode} without stop token")
        warnings = list(seq.warnings) + warnings
        dump = None
        if capture:
            full = seq.extend(ids, 2, 1, False)
            _, maps = forward(make_batch([full], self.pad_id), self.params, self.model_config, return_attention=True)
            dump = {"tokens": self.vocab.decode(full.token_ids), "layers": [m[0] for m in maps]}
        return state, tuple(warnings), dump

    def checkpoint(self, optimizer: Adam | None = None, extra: dict | None = None) -> checkpoint.Checkpoint:
        return checkpoint.Checkpoint(
            self.model_config,
            {k: v.copy() for k, v in self.params.items()},
            self.vocab.hash,
            optimizer.state() if optimizer is not None else None,
            {"run_config": self.config.to_json(), **(extra or {})},
        )

    @classmethod
    def from_checkpoint(cls, ckpt: checkpoint.Checkpoint, schema: Schema, vocab: Vocabulary,
                        config: RunConfig | None = None) -> "Tracker":
        if ckpt.vocab_hash != vocab.hash:
            raise checkpoint.CheckpointVocabError("vocabulary does not match checkpoint")
        if config is None:
            config = RunConfig.from_json(ckpt.extra["run_config"])
        return cls(schema, vocab, config, ckpt.config, ckpt.params)


def track_dialogue(record: DialogueRecord, tracker: Tracker, capture_attention: bool = False) -> list[TrackerOutput]:
    """Run both passes turn by turn, conditioning on the previous final prediction."""
    cfg = tracker.config
    empty = tracker.schema.empty_state()
    prev_final = empty
    history: list[Turn] = []
    outputs = []
    gold_prev = empty
    for turn, gold in record.turns:
        cond = gold_prev if cfg.gold_conditioning else prev_final
        seq = tracker.pass_input(PassKind.BASIC, turn, cond, history)
        primitive, bw, bdump = tracker.run_pass(seq, prev_final, capture_attention)
        amended, aw, adump = None, (), None
        if cfg.amending_enabled:
            seq = tracker.pass_input(PassKind.AMENDING, turn, primitive, history)
            amended, aw, adump = tracker.run_pass(seq, prev_final, capture_attention)
        attention = None
        if capture_attention:
            attention = {"basic": bdump}
            if adump is not None:
                attention["amending"] = adump
        out = TrackerOutput(primitive, amended, bw, aw, attention)
        outputs.append(out)
        prev_final = out.final_state
        history.append(turn)
        gold_prev = gold
    return outputs


def predict(records: Sequence[DialogueRecord], tracker: Tracker) -> PredictionRun:
    turns = []
    for rec in records:
        for i, ((_, gold), out) in enumerate(zip(rec.turns, track_dialogue(rec, tracker))):
            turns.append(TurnPrediction(rec.id, i, gold, out.primitive_state, out.final_state,
                                        out.basic_warnings + out.amend_warnings))
    return PredictionRun(tracker.schema, turns)


def oracle_repair_run(records: Sequence[DialogueRecord], tracker: Tracker, policy: CorruptionPolicy,
                      mode: str = "amend") -> PredictionRun:
    """Per turn, corrupt the gold state and let the model repair it.

    ``mode`` is ``"amend"`` (amending pass on the corrupted primitive),
    ``"identity"`` (final = primitive, the basic-only pipeline) or
    ``"basic_probe"`` (basic pass conditioned on the corrupted state; diagnostic).
    """
    if mode not in ("amend", "identity", "basic_probe"):
        raise ValueError(f"unknown repair mode {mode!r}")
    if mode == "amend" and not tracker.config.amending_enabled:
        raise ConfigError("amend repair mode needs an amending-enabled tracker")
    rng = random.Random(policy.rng_seed)
    pool = negsample.value_pool(tracker.schema, policy)
    turns = []
    for ex in turn_examples(records):
        prim, fired = negsample.corrupt_logged(ex.gold_prev, ex.gold_curr, tracker.schema, policy, rng, pool)
        warnings: tuple[str, ...] = ()
        if mode == "identity":
            final = prim
        else:
            kind = PassKind.AMENDING if mode == "amend" else PassKind.BASIC
            seq = tracker.pass_input(kind, ex.turn, prim, ex.history)
            final, warnings, _ = tracker.run_pass(seq, ex.gold_prev)
        turns.append(TurnPrediction(ex.dialogue_id, ex.index, ex.gold_curr, prim, final, warnings,
                                    tuple(s for s, _ in fired)))
    return PredictionRun(tracker.schema, turns)


# ---------------------------------------------------------------- training


@dataclass
class StepResult:
    loss_basic: float
    loss_amending: float | None
    grad_norm: float
    lr: float

    @property
    def total(self) -> float:
        return self.loss_basic + (self.loss_amending or 0.0)


class Trainer:
    def __init__(self, tracker: Tracker, train_examples: Sequence[TurnExample], steps_per_epoch: int = 1):
        cfg = tracker.config
        self.tracker = tracker
        self.config = cfg
        self.schedule = Schedule(cfg.base_lr, cfg.warmup_steps, cfg.decay_rate, steps_per_epoch)
        self.optimizer = Adam(tracker.params, self.schedule)
        self.corrupt_rng = random.Random(cfg.corruption.rng_seed)
        self.dropout_rng = np.random.default_rng(cfg.seed + 1)
        self.pool = None
        if cfg.negative_sampling is not NegativeSampling.OFF:
            self.pool = negsample.value_pool(tracker.schema, cfg.corruption, (ex.gold_curr for ex in train_examples))
        self._basic_cache: dict[tuple[str, int], TaggedSequence] = {}

    def _basic(self, ex: TurnExample) -> TaggedSequence:
        key = (ex.dialogue_id, ex.index)
        seq = self._basic_cache.get(key)
        if seq is None:
            seq = self.tracker.training_sequence(PassKind.BASIC, ex, ex.gold_prev)
            self._basic_cache[key] = seq
        return seq

    def primitive(self, ex: TurnExample) -> DialogueState:
        if self.config.negative_sampling is NegativeSampling.OFF:
            return ex.gold_curr
        return negsample.primitive(ex.gold_prev, ex.gold_curr, self.tracker.schema,
                                   self.config.corruption, self.corrupt_rng, self.pool)

    def step(self, examples: Sequence[TurnExample]) -> StepResult:
        """One optimizer step on the summed per-sequence mean NLL of both passes, averaged over turns."""
        tr = self.tracker
        seqs = [self._basic(ex) for ex in examples]
        if self.config.amending_enabled:
            seqs += [tr.training_sequence(PassKind.AMENDING, ex, self.primitive(ex)) for ex in examples]
        batch = make_batch(seqs, tr.pad_id)
        n = len(examples)
        weights = batch.target_mask / (batch.target_mask.sum(axis=1, keepdims=True) * n)
        _, nll, grads = loss_and_grads(batch, tr.params, tr.model_config, weights, train=True, rng=self.dropout_rng)
        rows = np.nonzero(batch.target_mask)[0]
        contrib = nll.astype(np.float64) * weights[batch.target_mask]
        loss_basic = float(contrib[rows < n].sum())
        loss_amend = float(contrib[rows >= n].sum()) if self.config.amending_enabled else None
        norm = clip_grads(grads, self.config.grad_clip)
        lr = self.optimizer.update(tr.params, grads)
        return StepResult(loss_basic, loss_amend, norm, lr)

    def batches(self, examples: Sequence[TurnExample], rng: random.Random) -> list[list[TurnExample]]:
        order = list(examples)
        rng.shuffle(order)
        budget = self.config.token_budget
        if budget is None:
            bs = self.config.batch_size
            return [order[i:i + bs] for i in range(0, len(order), bs)]
        out, cur, longest = [], [], 0
        passes = 2 if self.config.amending_enabled else 1
        for ex in order:
            n = len(self._basic(ex))
            if cur and max(longest, n) * (len(cur) + 1) * passes > budget:
                out.append(cur)
                cur, longest = [], 0
            cur.append(ex)
            longest = max(longest, n)
        if cur:
            out.append(cur)
        return out


@dataclass
class TrainResult:
    checkpoint: checkpoint.Checkpoint
    tracker: Tracker
    log: list[dict]
    best_epoch: int
    best_jga: float
    diverged: bool = False


def train(train_records: Sequence[DialogueRecord], valid_records: Sequence[DialogueRecord],
          schema: Schema, vocab: Vocabulary, config: RunConfig,
          on_event: Callable[[dict], None] | None = None) -> TrainResult:
    """Epoch loop with per-epoch validation JGA, best-checkpoint retention and patience."""
    if not train_records or not valid_records:
        raise ConfigError("train and validation splits must be nonempty")
    tracker = Tracker(schema, vocab, config)
    examples = turn_examples(train_records)
    shuffle_rng = random.Random(config.seed)
    trainer = Trainer(tracker, examples)
    steps_per_epoch = len(trainer.batches(examples, random.Random(config.seed)))
    trainer.schedule.steps_per_epoch = steps_per_epoch

    events: list[dict] = []

    def emit(ev: dict) -> None:
        events.append(ev)
        if on_event is not None:
            on_event(ev)

    emit({"event": "start", "run_config": config.to_json(), "model_config": tracker.model_config.to_json(),
          "train_turns": len(examples), "steps_per_epoch": steps_per_epoch, "vocab_size": len(vocab)})
    best_params = {k: v.copy() for k, v in tracker.params.items()}
    best_jga, best_epoch, stale = -1.0, 0, 0
    diverged = False
    for epoch in range(1, config.epochs + 1):
        sums = {"basic": 0.0, "amending": 0.0, "total": 0.0}
        count = 0
        try:
            for batch in trainer.batches(examples, shuffle_rng):
                res = trainer.step(batch)
                k = len(batch)
                sums["basic"] += res.loss_basic * k
                sums["amending"] += (res.loss_amending or 0.0) * k
                sums["total"] += res.total * k
                count += k
                if not np.isfinite(res.total):
                    raise NumericError("non-finite loss")
        except NumericError as exc:
            diverged = True
            emit({"event": "diverged", "epoch": epoch, "error": str(exc)})
            log.warning("training diverged in epoch %d: %s", epoch, exc)
            break
        jga = joint_goal_accuracy(predict(valid_records, tracker))
        ev = {
            "event": "epoch",
            "epoch": epoch,
            "loss_basic": sums["basic"] / count,
            "loss_amending": sums["amending"] / count if config.amending_enabled else None,
            "loss_total": sums["total"] / count,
            "valid_jga": jga,
            "lr": trainer.schedule.lr(trainer.optimizer.step),
            "steps": trainer.optimizer.step,
        }
        emit(ev)
        log.info("epoch %d loss %.4f valid jga %.4f", epoch, ev["loss_total"], jga)
        if jga > best_jga:
            best_jga, best_epoch, stale = jga, epoch, 0
            best_params = {k: v.copy() for k, v in tracker.params.items()}
        else:
            stale += 1
            if stale > config.patience:
                emit({"event": "early_stop", "epoch": epoch, "best_epoch": best_epoch})
                break
        if config.target_jga is not None and jga >= config.target_jga:
            emit({"event": "target_reached", "epoch": epoch})
            break

    tracker.params = best_params
    emit({"event": "done", "best_epoch": best_epoch, "best_valid_jga": best_jga, "diverged": diverged})
    ckpt = tracker.checkpoint(trainer.optimizer, {"best_epoch": best_epoch, "best_valid_jga": best_jga})
    return TrainResult(ckpt, tracker, events, best_epoch, best_jga, diverged)
