"""Tiny pre-norm causal transformer with hand-written backward pass."""

from __future__ import annotations

import enum
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .. import kernels
from ..core import StructuralError
from ..linearize import Role, Segment, TaggedSequence


class NumericError(ArithmeticError):
    """A non-finite value appeared in activations or gradients."""


class EmbeddingMode(enum.Enum):
    TOKEN_POSITION = "token_position"
    TOKEN_POSITION_ROLE_SEGMENT = "token_position_role_segment"


@dataclass
class ModelConfig:
    vocab_size: int
    layers: int = 2
    heads: int = 2
    hidden: int = 64
    ffn_multiplier: int = 4
    max_positions: int = 256
    role_count: int = len(Role)
    segment_count: int = len(Segment)
    embedding_mode: EmbeddingMode = EmbeddingMode.TOKEN_POSITION_ROLE_SEGMENT
    dropout: float = 0.0
    seed: int = 0
    dtype: str = "float32"
    init_std: float = 0.02
    ln_eps: float = 1e-5

    def __post_init__(self) -> None:
        self.embedding_mode = EmbeddingMode(self.embedding_mode)
        if self.hidden % self.heads:
            raise ValueError(f"hidden {self.hidden} not divisible by heads {self.heads}")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError(f"dropout must be in [0, 1), got {self.dropout}")
        if self.dtype not in ("float32", "float64"):
            raise ValueError(f"dtype must be float32 or float64, got {self.dtype}")

    @property
    def ffn(self) -> int:
        return self.hidden * self.ffn_multiplier

    @property
    def np_dtype(self):
        return np.dtype(self.dtype)

    def to_json(self) -> dict:
        d = asdict(self)
        d["embedding_mode"] = self.embedding_mode.value
        return d

    @classmethod
    def from_json(cls, d: dict) -> "ModelConfig":
        return cls(**d)


def param_shapes(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    h, f, v = cfg.hidden, cfg.ffn, cfg.vocab_size
    shapes = {
        "embed.token": (v, h),
        "embed.position": (cfg.max_positions, h),
        "embed.role": (cfg.role_count, h),
        "embed.segment": (cfg.segment_count, h),
    }
    for i in range(cfg.layers):
        p = f"block{i}."
        shapes.update({
            p + "ln1.gain": (h,), p + "ln1.bias": (h,),
            p + "attn.qkv.weight": (h, 3 * h), p + "attn.qkv.bias": (3 * h,),
            p + "attn.out.weight": (h, h), p + "attn.out.bias": (h,),
            p + "ln2.gain": (h,), p + "ln2.bias": (h,),
            p + "ffn.in.weight": (h, f), p + "ffn.in.bias": (f,),
            p + "ffn.out.weight": (f, h), p + "ffn.out.bias": (h,),
        })
    shapes["final_ln.gain"] = (h,)
    shapes["final_ln.bias"] = (h,)
    shapes["head.bias"] = (v,)
    return shapes


def init_params(cfg: ModelConfig) -> dict[str, np.ndarray]:
    rng = np.random.default_rng(cfg.seed)
    dt = cfg.np_dtype
    params = {}
    for name, shape in param_shapes(cfg).items():
        if name.endswith(".gain"):
            arr = np.ones(shape)
        elif name.endswith(".bias"):
            arr = np.zeros(shape)
        else:
            std = cfg.init_std
            if name.endswith("attn.out.weight") or name.endswith("ffn.out.weight"):
                std /= np.sqrt(2 * cfg.layers)
            arr = rng.normal(0.0, std, size=shape)
        params[name] = arr.astype(dt)
    return params


def zero_params(cfg: ModelConfig) -> dict[str, np.ndarray]:
    return {n: np.zeros(s, dtype=cfg.np_dtype) for n, s in param_shapes(cfg).items()}


def n_params(params: dict[str, np.ndarray]) -> int:
    return sum(p.size for p in params.values())


# ---------------------------------------------------------------- batching


@dataclass
class Batch:
    tokens: np.ndarray      # (B, T) int64
    positions: np.ndarray
    roles: np.ndarray
    segments: np.ndarray
    target_mask: np.ndarray  # (B, T) bool
    lengths: np.ndarray = field(default=None)

    @property
    def shape(self) -> tuple[int, int]:
        return self.tokens.shape


def make_batch(seqs: Sequence[TaggedSequence], pad_id: int = 0) -> Batch:
    """Right-pad sequences; padding sits after every real token so causal masking hides it."""
    b = len(seqs)
    t = max(len(s) for s in seqs)
    tokens = np.full((b, t), pad_id, dtype=np.int64)
    positions = np.tile(np.arange(t, dtype=np.int64), (b, 1))
    roles = np.full((b, t), int(Role.MARKER), dtype=np.int64)
    segments = np.full((b, t), int(Segment.CONTEXT), dtype=np.int64)
    mask = np.zeros((b, t), dtype=bool)
    lengths = np.zeros(b, dtype=np.int64)
    for i, s in enumerate(seqs):
        n = len(s)
        lengths[i] = n
        tokens[i, :n] = s.token_ids
        positions[i, :n] = s.positions
        roles[i, :n] = s.roles
        segments[i, :n] = s.segments
        mask[i, :n] = s.target_mask
    return Batch(tokens, positions, roles, segments, mask, lengths)


# ---------------------------------------------------------------- forward / backward


def _check(name: str, arr: np.ndarray) -> None:
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"non-finite values in {name}")


def embed(batch: Batch, params, cfg: ModelConfig) -> np.ndarray:
    if batch.positions.size and int(batch.positions.max()) >= cfg.max_positions:
        raise StructuralError(
            f"position {int(batch.positions.max())} exceeds max_positions {cfg.max_positions}"
        )
    x = params["embed.token"][batch.tokens] + params["embed.position"][batch.positions]
    if cfg.embedding_mode is EmbeddingMode.TOKEN_POSITION_ROLE_SEGMENT:
        x = x + params["embed.role"][batch.roles] + params["embed.segment"][batch.segments]
    return x


def _dropout(x, p, rng):
    if p <= 0.0 or rng is None:
        return x, None
    keep = (rng.random(x.shape) >= p).astype(x.dtype) / (1.0 - p)
    return x * keep, keep


def _forward(params, cfg: ModelConfig, batch: Batch, train: bool, rng, keep_cache: bool, capture: bool):
    b, t = batch.shape
    h, nh = cfg.hidden, cfg.heads
    d = h // nh
    scale = float(1.0 / np.sqrt(d))
    p_drop = cfg.dropout if train else 0.0
    eps = cfg.ln_eps

    x, emb_keep = _dropout(embed(batch, params, cfg), p_drop, rng)
    x = x.reshape(b * t, h)
    caches, attn_maps = [], []
    for i in range(cfg.layers):
        pre = f"block{i}."
        a, ln1_xhat, ln1_rstd = kernels.layer_norm_fwd(x, params[pre + "ln1.gain"], params[pre + "ln1.bias"], eps)
        qkv = a @ params[pre + "attn.qkv.weight"] + params[pre + "attn.qkv.bias"]
        qkv = qkv.reshape(b, t, 3, nh, d).transpose(2, 0, 3, 1, 4)
        q, k, v = qkv[0], qkv[1], qkv[2]
        scores = (q @ k.transpose(0, 1, 3, 2)) * scale
        probs = kernels.causal_softmax_fwd(scores)
        o = (probs @ v).transpose(0, 2, 1, 3).reshape(b * t, h)
        y = o @ params[pre + "attn.out.weight"] + params[pre + "attn.out.bias"]
        y, attn_keep = _dropout(y, p_drop, rng)
        x = x + y
        f, ln2_xhat, ln2_rstd = kernels.layer_norm_fwd(x, params[pre + "ln2.gain"], params[pre + "ln2.bias"], eps)
        u = f @ params[pre + "ffn.in.weight"] + params[pre + "ffn.in.bias"]
        g = kernels.gelu_fwd(u)
        z = g @ params[pre + "ffn.out.weight"] + params[pre + "ffn.out.bias"]
        z, ffn_keep = _dropout(z, p_drop, rng)
        x = x + z
        if not np.isfinite(x).all():
            raise NumericError(f"non-finite activations after layer {i}")
        if capture:
            attn_maps.append(probs)
        if keep_cache:
            caches.append((a, ln1_xhat, ln1_rstd, q, k, v, probs, o, attn_keep, f, ln2_xhat, ln2_rstd, u, g, ffn_keep))
    hf, fxhat, frstd = kernels.layer_norm_fwd(x, params["final_ln.gain"], params["final_ln.bias"], eps)
    return hf, (emb_keep, caches, fxhat, frstd), attn_maps


def forward(batch: Batch, params, cfg: ModelConfig, train: bool = False, rng=None, return_attention: bool = False):
    """Logits ``(B, T, V)``; position ``i`` depends only on tokens ``<= i``."""
    b, t = batch.shape
    hf, _, maps = _forward(params, cfg, batch, train, rng, keep_cache=False, capture=return_attention)
    logits = (hf @ params["embed.token"].T + params["head.bias"]).reshape(b, t, cfg.vocab_size)
    if return_attention:
        return logits, maps
    return logits


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def nll_loss(logits: np.ndarray, seq: TaggedSequence) -> float:
    """Mean over target tokens of -log p(token_t | tokens < t), read from row t-1."""
    mask = np.asarray(seq.target_mask, dtype=bool)
    idx = np.nonzero(mask)[0]
    if idx.size == 0:
        raise ValueError("sequence has no target positions")
    if idx[0] == 0:
        raise ValueError("the first token cannot be a target")
    logits = np.asarray(logits, dtype=np.float64)
    rows = logits[idx - 1]
    m = rows.max(axis=-1, keepdims=True)
    logz = np.log(np.exp(rows - m).sum(axis=-1)) + m[:, 0]
    tokens = np.asarray(seq.token_ids)[idx]
    return float(np.mean(logz - rows[np.arange(idx.size), tokens]))


def target_rows(batch: Batch):
    """(flat predicting-row index, target token id) for every masked token."""
    b, t = batch.shape
    bi, ti = np.nonzero(batch.target_mask)
    if np.any(ti == 0):
        raise ValueError("the first token cannot be a target")
    return bi * t + (ti - 1), batch.tokens[bi, ti], (bi, ti)


def loss_and_grads(batch: Batch, params, cfg: ModelConfig, token_weights: np.ndarray, train: bool = False, rng=None):
    """Weighted NLL ``sum(w * nll)`` over target tokens, its per-token terms, and gradients.

    ``token_weights`` is ``(B, T)``, read at the target positions.
    """
    b, t = batch.shape
    h, nh = cfg.hidden, cfg.heads
    d = h // nh
    scale = float(1.0 / np.sqrt(d))
    dt = cfg.np_dtype

    hf, (emb_keep, caches, fxhat, frstd), _ = _forward(params, cfg, batch, train, rng, keep_cache=True, capture=False)
    rows, targets, (bi, ti) = target_rows(batch)
    if rows.size == 0:
        raise ValueError("batch has no target positions")
    w = np.asarray(token_weights, dtype=dt)[bi, ti]
    tok_emb = params["embed.token"]
    hsel = hf[rows]
    logits = hsel @ tok_emb.T + params["head.bias"]
    nll, dlogits = kernels.xent_fwd_bwd(logits, targets, w)
    loss = float(np.dot(nll.astype(np.float64), w.astype(np.float64)))
    if not np.isfinite(loss):
        raise NumericError("non-finite loss")

    grads = {name: np.zeros_like(p) for name, p in params.items()}
    grads["head.bias"] += dlogits.sum(axis=0)
    grads["embed.token"] += dlogits.T @ hsel
    dhf = np.zeros((b * t, h), dtype=dt)
    dhf[rows] = dlogits @ tok_emb

    dx, dg_, db_ = kernels.layer_norm_bwd(dhf, fxhat, frstd, params["final_ln.gain"])
    grads["final_ln.gain"] += dg_
    grads["final_ln.bias"] += db_

    for i in reversed(range(cfg.layers)):
        pre = f"block{i}."
        (a, ln1_xhat, ln1_rstd, q, k, v, probs, o, attn_keep, f, ln2_xhat, ln2_rstd, u, g, ffn_keep) = caches[i]
        dz = dx * ffn_keep if ffn_keep is not None else dx
        grads[pre + "ffn.out.weight"] += g.T @ dz
        grads[pre + "ffn.out.bias"] += dz.sum(axis=0)
        dgelu = dz @ params[pre + "ffn.out.weight"].T
        du = kernels.gelu_bwd(dgelu, u)
        grads[pre + "ffn.in.weight"] += f.T @ du
        grads[pre + "ffn.in.bias"] += du.sum(axis=0)
        df = du @ params[pre + "ffn.in.weight"].T
        dln, dgain, dbias = kernels.layer_norm_bwd(df, ln2_xhat, ln2_rstd, params[pre + "ln2.gain"])
        grads[pre + "ln2.gain"] += dgain
        grads[pre + "ln2.bias"] += dbias
        dx = dx + dln

        dy = dx * attn_keep if attn_keep is not None else dx
        grads[pre + "attn.out.weight"] += o.T @ dy
        grads[pre + "attn.out.bias"] += dy.sum(axis=0)
        do = (dy @ params[pre + "attn.out.weight"].T).reshape(b, t, nh, d).transpose(0, 2, 1, 3)
        dprobs = do @ v.transpose(0, 1, 3, 2)
        dv = probs.transpose(0, 1, 3, 2) @ do
        dscores = kernels.causal_softmax_bwd(dprobs, probs) * dt.type(scale)
        dq = dscores @ k
        dk = dscores.transpose(0, 1, 3, 2) @ q
        dqkv = np.stack([dq, dk, dv]).transpose(1, 3, 0, 2, 4).reshape(b * t, 3 * h)
        grads[pre + "attn.qkv.weight"] += a.T @ dqkv
        grads[pre + "attn.qkv.bias"] += dqkv.sum(axis=0)
        da = dqkv @ params[pre + "attn.qkv.weight"].T
        dln, dgain, dbias = kernels.layer_norm_bwd(da, ln1_xhat, ln1_rstd, params[pre + "ln1.gain"])
        grads[pre + "ln1.gain"] += dgain
        grads[pre + "ln1.bias"] += dbias
        dx = dx + dln

    if emb_keep is not None:
        dx = dx * emb_keep.reshape(b * t, h)
    kernels.scatter_add_rows(grads["embed.token"], batch.tokens.reshape(-1), dx)
    kernels.scatter_add_rows(grads["embed.position"], batch.positions.reshape(-1), dx)
    if cfg.embedding_mode is EmbeddingMode.TOKEN_POSITION_ROLE_SEGMENT:
        kernels.scatter_add_rows(grads["embed.role"], batch.roles.reshape(-1), dx)
        kernels.scatter_add_rows(grads["embed.segment"], batch.segments.reshape(-1), dx)

    for name, gr in grads.items():
        if not np.isfinite(gr).all():
            raise NumericError(f"non-finite gradient for {name}")
    return loss, nll, grads


# ---------------------------------------------------------------- decoding


class _KVCache:
    def __init__(self, cfg: ModelConfig):
        d = cfg.hidden // cfg.heads
        shape = (cfg.layers, cfg.heads, cfg.max_positions, d)
        self.k = np.zeros(shape, dtype=cfg.np_dtype)
        self.v = np.zeros(shape, dtype=cfg.np_dtype)
        self.n = 0


def _prefill(params, cfg: ModelConfig, seq: TaggedSequence, cache: _KVCache) -> np.ndarray:
    batch = make_batch([seq])
    n = len(seq)
    h, nh = cfg.hidden, cfg.heads
    d = h // nh
    scale = float(1.0 / np.sqrt(d))
    eps = cfg.ln_eps
    x = embed(batch, params, cfg).reshape(n, h)
    for i in range(cfg.layers):
        pre = f"block{i}."
        a = kernels.layer_norm_fwd(x, params[pre + "ln1.gain"], params[pre + "ln1.bias"], eps)[0]
        qkv = (a @ params[pre + "attn.qkv.weight"] + params[pre + "attn.qkv.bias"]).reshape(n, 3, nh, d)
        q, k, v = (qkv[:, j].transpose(1, 0, 2) for j in range(3))
        cache.k[i, :, :n] = k
        cache.v[i, :, :n] = v
        probs = kernels.causal_softmax_fwd((q @ k.transpose(0, 2, 1)) * scale)
        o = (probs @ v).transpose(1, 0, 2).reshape(n, h)
        x = x + o @ params[pre + "attn.out.weight"] + params[pre + "attn.out.bias"]
        f = kernels.layer_norm_fwd(x, params[pre + "ln2.gain"], params[pre + "ln2.bias"], eps)[0]
        x = x + kernels.gelu_fwd(f @ params[pre + "ffn.in.weight"] + params[pre + "ffn.in.bias"]) @ params[pre + "ffn.out.weight"] + params[pre + "ffn.out.bias"]
    cache.n = n
    hf = kernels.layer_norm_fwd(x[-1:], params["final_ln.gain"], params["final_ln.bias"], eps)[0]
    return (hf @ params["embed.token"].T + params["head.bias"])[0]


def _step(params, cfg: ModelConfig, token: int, role: int, segment: int, cache: _KVCache) -> np.ndarray:
    pos = cache.n
    h, nh = cfg.hidden, cfg.heads
    d = h // nh
    scale = float(1.0 / np.sqrt(d))
    eps = cfg.ln_eps
    x = params["embed.token"][token] + params["embed.position"][pos]
    if cfg.embedding_mode is EmbeddingMode.TOKEN_POSITION_ROLE_SEGMENT:
        x = x + params["embed.role"][role] + params["embed.segment"][segment]
    x = x[None, :]
    for i in range(cfg.layers):
        pre = f"block{i}."
        a = kernels.layer_norm_fwd(x, params[pre + "ln1.gain"], params[pre + "ln1.bias"], eps)[0]
        qkv = (a @ params[pre + "attn.qkv.weight"] + params[pre + "attn.qkv.bias"]).reshape(3, nh, d)
        cache.k[i, :, pos] = qkv[1]
        cache.v[i, :, pos] = qkv[2]
        keys = cache.k[i, :, : pos + 1]
        s = np.einsum("hd,htd->ht", qkv[0], keys) * scale
        s = np.exp(s - s.max(axis=-1, keepdims=True))
        s /= s.sum(axis=-1, keepdims=True)
        o = np.einsum("ht,htd->hd", s, cache.v[i, :, : pos + 1]).reshape(1, h)
        x = x + o @ params[pre + "attn.out.weight"] + params[pre + "attn.out.bias"]
        f = kernels.layer_norm_fwd(x, params[pre + "ln2.gain"], params[pre + "ln2.bias"], eps)[0]
        x = x + kernels.gelu_fwd(f @ params[pre + "ffn.in.weight"] + params[pre + "ffn.in.bias"]) @ params[pre + "ffn.out.weight"] + params[pre + "ffn.out.bias"]
    cache.n = pos + 1
    hf = kernels.layer_norm_fwd(x, params["final_ln.gain"], params["final_ln.bias"], eps)[0]
    return (hf @ params["embed.token"].T + params["head.bias"])[0]


def greedy_decode(prefix: TaggedSequence, params, cfg: ModelConfig, stop_token: int, max_new: int) -> list[int]:
    """Append argmax tokens (ties to the lowest id) until ``stop_token`` or ``max_new``.

    The emitted list includes the stop token when it is produced.
    """
    if len(prefix) >= cfg.max_positions:
        raise StructuralError(f"prefix length {len(prefix)} leaves no room under max_positions")
    cache = _KVCache(cfg)
    logits = _prefill(params, cfg, prefix, cache)
    out: list[int] = []
    while len(out) < max_new:
        tok = int(np.argmax(logits))
        out.append(tok)
        # prefix + emitted tokens must stay embeddable for a later full forward
        if tok == stop_token or cache.n + 1 >= cfg.max_positions:
            break
        logits = _step(params, cfg, tok, int(Role.STATE), int(Segment.STATE), cache)
    return out
