import math

import numpy as np
import pytest

from agdst.core import StructuralError
from agdst.linearize import Role, Segment, TaggedSequence
from agdst.neural import checkpoint as C
from agdst.neural import model as M
from agdst.neural.optim import Adam, Schedule, clip_grads, global_norm

from oracles import gradient_check, softmax_gather_nll, straight_line_forward


def seq(tokens, n_prefix=None, roles=None, segments=None):
    n = len(tokens)
    n_prefix = n if n_prefix is None else n_prefix
    return TaggedSequence(
        tuple(tokens), tuple(range(n)),
        tuple(roles or [i % 4 for i in range(n)]),
        tuple(segments or [int(i >= n_prefix) for i in range(n)]),
        tuple(i >= n_prefix for i in range(n)),
    )


def small_cfg(**kw):
    base = dict(vocab_size=11, layers=2, heads=2, hidden=8, ffn_multiplier=2, max_positions=16, seed=3)
    base.update(kw)
    return M.ModelConfig(**base)


def uniform_weights(batch):
    w = batch.target_mask.astype(np.float64)
    return w / w.sum(axis=1, keepdims=True) / batch.shape[0]


class TestConfig:
    def test_heads_must_divide_hidden(self):
        with pytest.raises(ValueError):
            M.ModelConfig(vocab_size=5, hidden=10, heads=3)

    @pytest.mark.parametrize("p", [1.0, -0.1])
    def test_dropout_range(self, p):
        with pytest.raises(ValueError):
            M.ModelConfig(vocab_size=5, dropout=p)

    def test_json_round_trip(self):
        cfg = small_cfg(embedding_mode="token_position")
        assert M.ModelConfig.from_json(cfg.to_json()) == cfg

    def test_seeded_init(self):
        a, b = M.init_params(small_cfg()), M.init_params(small_cfg())
        assert all(np.array_equal(a[k], b[k]) for k in a)
        c = M.init_params(small_cfg(seed=4))
        assert not np.array_equal(a["embed.token"], c["embed.token"])
        assert set(a) == set(M.param_shapes(small_cfg()))


class TestEmbed:
    def test_zero_tables(self):
        cfg = small_cfg()
        b = M.make_batch([seq([1, 2, 3])])
        assert not M.embed(b, M.zero_params(cfg), cfg).any()

    def test_single_token_lookup(self):
        cfg = small_cfg()
        p = M.init_params(cfg)
        s = TaggedSequence((7,), (0,), (int(Role.USER),), (int(Segment.STATE),), (False,))
        out = M.embed(M.make_batch([s]), p, cfg)[0, 0]
        for j in range(cfg.hidden):
            want = p["embed.token"][7][j] + p["embed.position"][0][j] + p["embed.role"][1][j] + p["embed.segment"][1][j]
            assert out[j] == pytest.approx(float(want), abs=1e-7)

    def test_token_position_ignores_role_segment(self):
        cfg = small_cfg(embedding_mode=M.EmbeddingMode.TOKEN_POSITION)
        p = M.init_params(cfg)
        a = seq([1, 2, 3], roles=[0, 1, 2], segments=[0, 0, 1])
        b = seq([1, 2, 3], roles=[3, 3, 0], segments=[1, 1, 0])
        ea = M.embed(M.make_batch([a]), p, cfg)
        eb = M.embed(M.make_batch([b]), p, cfg)
        assert np.array_equal(ea, eb)
        assert np.array_equal(M.forward(M.make_batch([a]), p, cfg), M.forward(M.make_batch([b]), p, cfg))

    def test_position_overflow(self):
        cfg = small_cfg(max_positions=4)
        with pytest.raises(StructuralError):
            M.embed(M.make_batch([seq([1] * 5)]), M.zero_params(cfg), cfg)


class TestForward:
    def test_straight_line_oracle(self, backend):
        cfg = M.ModelConfig(vocab_size=5, layers=1, heads=1, hidden=4, ffn_multiplier=1, max_positions=4,
                            dtype="float64", seed=0)
        rng = np.random.default_rng(9)
        p = {n: rng.normal(0, 0.5, size=s) for n, s in M.param_shapes(cfg).items()}
        tokens, roles, segs = [3, 0, 4], [0, 1, 2], [0, 0, 1]
        s = TaggedSequence(tuple(tokens), (0, 1, 2), tuple(roles), tuple(segs), (False,) * 3)
        got = M.forward(M.make_batch([s]), p, cfg)[0]
        want = straight_line_forward(tokens, roles, segs, p)
        np.testing.assert_allclose(got, want, rtol=1e-10, atol=1e-12)

    def test_causality(self, backend):
        cfg = small_cfg()
        p = M.init_params(cfg)
        rng = np.random.default_rng(0)
        p = {k: v + rng.normal(0, 0.2, v.shape).astype(v.dtype) for k, v in p.items()}
        base = [1, 5, 2, 9, 4, 3, 7]
        la = M.forward(M.make_batch([seq(base)]), p, cfg)[0]
        for j in range(1, len(base)):
            pert = list(base)
            pert[j] = (pert[j] + 1) % cfg.vocab_size
            lb = M.forward(M.make_batch([seq(pert)]), p, cfg)[0]
            assert np.array_equal(la[:j], lb[:j])
            assert not np.array_equal(la[j:], lb[j:])

    def test_padding_invariance(self, backend):
        cfg = small_cfg()
        p = M.init_params(cfg)
        short, long_ = seq([1, 2, 3]), seq([4, 5, 6, 7, 8, 9])
        alone = M.forward(M.make_batch([short]), p, cfg)[0]
        batched = M.forward(M.make_batch([short, long_], pad_id=0), p, cfg)[0, :3]
        np.testing.assert_allclose(alone, batched, rtol=1e-5, atol=1e-6)

    def test_zero_params_uniform(self):
        cfg = small_cfg()
        s = seq([1, 2, 3, 4], n_prefix=2)
        logits = M.forward(M.make_batch([s]), M.zero_params(cfg), cfg)[0]
        np.testing.assert_allclose(M.softmax(logits), 1.0 / cfg.vocab_size, rtol=1e-6)
        assert M.nll_loss(logits, s) == pytest.approx(math.log(cfg.vocab_size), rel=1e-6)

    def test_eval_deterministic_dropout_train_not(self):
        cfg = small_cfg(dropout=0.5)
        p = M.init_params(cfg)
        b = M.make_batch([seq([1, 2, 3, 4])])
        e1 = M.forward(b, p, cfg, train=False, rng=np.random.default_rng(1))
        e2 = M.forward(b, p, cfg, train=False, rng=np.random.default_rng(2))
        assert np.array_equal(e1, e2)
        t1 = M.forward(b, p, cfg, train=True, rng=np.random.default_rng(1))
        t2 = M.forward(b, p, cfg, train=True, rng=np.random.default_rng(1))
        t3 = M.forward(b, p, cfg, train=True, rng=np.random.default_rng(2))
        assert np.array_equal(t1, t2) and not np.array_equal(t1, t3)

    def test_non_finite_names_layer(self):
        cfg = small_cfg()
        p = M.init_params(cfg)
        p["block1.ffn.out.bias"][0] = np.inf
        with pytest.raises(M.NumericError, match="layer 1"):
            M.forward(M.make_batch([seq([1, 2])]), p, cfg)

    def test_attention_rows_sum_to_one(self):
        cfg = small_cfg()
        _, maps = M.forward(M.make_batch([seq([1, 2, 3, 4, 5])]), M.init_params(cfg), cfg, return_attention=True)
        assert len(maps) == cfg.layers
        for m in maps:
            np.testing.assert_allclose(m.sum(-1), 1.0, atol=1e-5)
            assert np.all(np.triu(m[0, 0], k=1) == 0)


class TestNll:
    def test_uniform(self):
        s = seq([1, 2, 3, 4, 5], n_prefix=2)
        assert M.nll_loss(np.zeros((5, 9)), s) == pytest.approx(math.log(9))

    def test_confident_near_zero(self):
        toks = [1, 2, 3, 4]
        s = seq(toks, n_prefix=1)
        logits = np.zeros((4, 6))
        for t in range(1, 4):
            logits[t - 1, toks[t]] = 25.0
        assert 0 < M.nll_loss(logits, s) < 1e-9

    def test_random_oracle(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            n = int(rng.integers(3, 9))
            toks = rng.integers(0, 7, size=n).tolist()
            mask = [False] + [bool(b) for b in rng.integers(0, 2, size=n - 1)]
            mask[-1] = True
            s = TaggedSequence(tuple(toks), tuple(range(n)), (0,) * n, (0,) * n, tuple(mask))
            logits = rng.normal(size=(n, 7)) * 2
            assert M.nll_loss(logits, s) == pytest.approx(softmax_gather_nll(logits, toks, mask), rel=1e-12)

    def test_no_targets(self):
        with pytest.raises(ValueError):
            M.nll_loss(np.zeros((3, 4)), seq([1, 2, 3]))

    def test_loss_and_grads_matches_nll(self, backend):
        cfg = small_cfg(dtype="float64")
        p = M.init_params(cfg)
        seqs = [seq([1, 2, 3, 4, 5], n_prefix=3), seq([6, 7, 8], n_prefix=1)]
        b = M.make_batch(seqs)
        loss, _, _ = M.loss_and_grads(b, p, cfg, uniform_weights(b))
        logits = M.forward(b, p, cfg)
        want = np.mean([M.nll_loss(logits[i, : len(s)], s) for i, s in enumerate(seqs)])
        assert loss == pytest.approx(want, rel=1e-10)


class TestGradients:
    @pytest.mark.parametrize("mode", list(M.EmbeddingMode))
    def test_finite_difference(self, backend, mode):
        cfg = small_cfg(dtype="float64", embedding_mode=mode)
        assert M.n_params(M.init_params(cfg)) <= 5000
        rng = np.random.default_rng(0)
        p = {k: v + rng.normal(0, 0.3, v.shape) for k, v in M.init_params(cfg).items()}
        seqs = [seq([1, 2, 3, 4, 5, 6], n_prefix=3), seq([7, 8, 9, 10], n_prefix=2)]
        b = M.make_batch(seqs)
        worst, where = gradient_check(b, p, cfg, uniform_weights(b), per_tensor=5)
        assert worst < 1e-4, where

    def test_finite_difference_with_dropout(self, backend):
        cfg = small_cfg(dtype="float64", dropout=0.2)
        rng = np.random.default_rng(1)
        p = {k: v + rng.normal(0, 0.3, v.shape) for k, v in M.init_params(cfg).items()}
        b = M.make_batch([seq([1, 2, 3, 4, 5], n_prefix=2)])
        worst, where = gradient_check(b, p, cfg, uniform_weights(b), per_tensor=3, train=True, rng_seed=5)
        assert worst < 1e-4, where

    def test_backends_agree_on_grads(self):
        from agdst import kernels
        if "compiled" not in kernels.available_backends():
            pytest.skip("extension not built")
        cfg = small_cfg()
        p = M.init_params(cfg)
        b = M.make_batch([seq([1, 2, 3, 4, 5], n_prefix=2), seq([3, 3, 3], n_prefix=1)])
        w = uniform_weights(b)
        prev = kernels.BACKEND
        try:
            out = {}
            for name in ("python", "compiled"):
                kernels.set_backend(name)
                out[name] = M.loss_and_grads(b, p, cfg, w)
        finally:
            kernels.set_backend(prev)
        assert out["python"][0] == pytest.approx(out["compiled"][0], rel=1e-5)
        for k in p:
            np.testing.assert_allclose(out["python"][2][k], out["compiled"][2][k], rtol=1e-3, atol=1e-6)

    def test_clip_names_non_finite_tensor(self):
        grads = {"a": np.ones(3), "b": np.array([1.0, np.nan])}
        with pytest.raises(M.NumericError, match="b"):
            clip_grads(grads, 1.0)

    def test_clip_scales_to_norm(self):
        grads = {"a": np.full(4, 3.0), "b": np.full(1, 4.0)}
        pre = clip_grads(grads, 1.0)
        assert pre == pytest.approx(math.sqrt(36 + 16))
        assert global_norm(grads) == pytest.approx(1.0)


class TestOptimizer:
    def test_warmup(self):
        s = Schedule(base_lr=0.01, warmup_steps=100, decay_rate=0.2, steps_per_epoch=1000)
        for step in (1, 50, 100):
            assert s.lr(step) == pytest.approx(0.01 * step / 100)

    def test_decay_after_epochs(self):
        s = Schedule(base_lr=0.01, warmup_steps=10, decay_rate=0.5, steps_per_epoch=20)
        assert s.lr(20) == pytest.approx(0.01)
        assert s.lr(21) == pytest.approx(0.01 / 1.5)
        assert s.lr(61) == pytest.approx(0.01 / 2.5)
        with pytest.raises(ValueError):
            s.lr(0)

    def test_zero_gradient_step_fresh(self):
        p = {"w": np.array([1.0, -2.0])}
        opt = Adam(p, Schedule(base_lr=0.1, warmup_steps=1))
        opt.update(p, {"w": np.zeros(2)})
        assert np.array_equal(p["w"], [1.0, -2.0])
        assert opt.step == 1 and not opt.m["w"].any() and not opt.v["w"].any()

    def test_zero_gradient_decays_moments(self):
        p = {"w": np.array([1.0])}
        opt = Adam(p, Schedule(base_lr=0.1, warmup_steps=1))
        opt.update(p, {"w": np.array([2.0])})
        m, v = opt.m["w"].copy(), opt.v["w"].copy()
        opt.update(p, {"w": np.zeros(1)})
        np.testing.assert_allclose(opt.m["w"], 0.9 * m)
        np.testing.assert_allclose(opt.v["w"], 0.999 * v)

    def test_first_step_is_lr_times_sign(self):
        p = {"w": np.array([0.5, 0.5])}
        opt = Adam(p, Schedule(base_lr=0.1, warmup_steps=1))
        opt.update(p, {"w": np.array([3.0, -0.01])})
        np.testing.assert_allclose(p["w"], [0.4, 0.6], atol=1e-6)


def lookup_model(vocab_size, script, prefix_len, big=10.0):
    """Zeroed blocks; position p's embedding points at ``script[p - prefix_len + 1]``."""
    cfg = M.ModelConfig(vocab_size=vocab_size, layers=1, heads=1, hidden=vocab_size, ffn_multiplier=1,
                        max_positions=prefix_len + len(script) + 2)
    p = M.zero_params(cfg)
    for k in p:
        if k.endswith(".gain"):
            p[k][:] = 1.0
    p["embed.token"][:] = np.eye(vocab_size)
    for i, tok in enumerate(script):
        p["embed.position"][prefix_len - 1 + i, tok] = big
    return cfg, p


class TestDecode:
    def test_scripted_two_steps(self, backend):
        stop = 5
        cfg, p = lookup_model(7, [2, 4, stop], prefix_len=3)
        assert M.greedy_decode(seq([1, 1, 1]), p, cfg, stop, max_new=10) == [2, 4, stop]

    def test_always_stop(self, backend):
        cfg = small_cfg()
        p = M.init_params(cfg)
        p["head.bias"][6] = 100.0
        assert M.greedy_decode(seq([1, 2]), p, cfg, 6, max_new=10) == [6]

    def test_ties_lowest_id(self):
        cfg = small_cfg()
        assert M.greedy_decode(seq([1, 2]), M.zero_params(cfg), cfg, 9, max_new=3) == [0, 0, 0]

    def test_max_new_bound(self):
        cfg = small_cfg()
        out = M.greedy_decode(seq([1]), M.init_params(cfg), cfg, stop_token=-1, max_new=4)
        assert len(out) == 4

    def test_stops_at_max_positions(self):
        cfg = small_cfg(max_positions=6)
        out = M.greedy_decode(seq([1, 2]), M.init_params(cfg), cfg, stop_token=-1, max_new=50)
        assert len(out) == 4
        full = seq([1, 2]).extend(out, Role.STATE, Segment.STATE, False)
        M.forward(M.make_batch([full]), M.init_params(cfg), cfg)

    def test_kv_cache_matches_full_forward(self, backend):
        cfg = small_cfg()
        rng = np.random.default_rng(2)
        p = {k: v + rng.normal(0, 0.3, v.shape).astype(v.dtype) for k, v in M.init_params(cfg).items()}
        prefix = seq([1, 3, 5, 7])
        out = M.greedy_decode(prefix, p, cfg, stop_token=-1, max_new=6)
        full = prefix.extend(out, Role.STATE, Segment.STATE, False)
        logits = M.forward(M.make_batch([full]), p, cfg)[0]
        n = len(prefix)
        assert [int(np.argmax(logits[n - 1 + i])) for i in range(len(out))] == out

    def test_deterministic(self):
        cfg = small_cfg()
        p = M.init_params(cfg)
        a = M.greedy_decode(seq([1, 2, 3]), p, cfg, 4, 8)
        assert a == M.greedy_decode(seq([1, 2, 3]), p, cfg, 4, 8)


class TestCheckpoint:
    def make(self, **kw):
        cfg = small_cfg()
        return C.Checkpoint(cfg, M.init_params(cfg), "abc123" * 4, {"step": 7}, {"epoch": 2, **kw})

    def test_round_trip_bit_exact(self, tmp_path):
        ck = self.make()
        raw = C.save(tmp_path / "m.ckpt", ck)
        back = C.load(tmp_path / "m.ckpt", ck.vocab_hash)
        assert back.config == ck.config and back.vocab_hash == ck.vocab_hash
        assert back.optimizer == {"step": 7} and back.extra == {"epoch": 2}
        for k in ck.params:
            assert back.params[k].tobytes() == ck.params[k].tobytes()
        assert C.save(tmp_path / "m2.ckpt", back) == raw
        assert not list(tmp_path.glob("*.tmp"))

    def test_vocab_mismatch(self, tmp_path):
        C.save(tmp_path / "m.ckpt", self.make())
        with pytest.raises(C.CheckpointVocabError):
            C.load(tmp_path / "m.ckpt", "other")

    def test_version_mismatch(self):
        raw = bytearray(C.to_bytes(self.make()))
        raw[len(C.MAGIC)] = 2
        with pytest.raises(C.CheckpointVersionError):
            C.from_bytes(bytes(raw))

    def test_bad_magic(self):
        with pytest.raises(C.CheckpointError):
            C.from_bytes(b"NOTACKPT" + b"\0" * 40)

    def test_every_truncation_fails(self):
        raw = C.to_bytes(self.make())
        cuts = list(range(0, 64)) + list(range(64, len(raw), 97)) + [len(raw) - 1]
        for n in cuts:
            with pytest.raises(C.CheckpointError):
                C.from_bytes(raw[:n])
        tail = raw[: -len(C.END)]
        with pytest.raises(C.CheckpointTruncatedError):
            C.from_bytes(tail)

    def test_shape_mismatch(self):
        ck = self.make()
        ck.params["head.bias"] = np.zeros(3, dtype=np.float32)
        with pytest.raises(C.CheckpointError):
            C.from_bytes(C.to_bytes(ck))

    def test_failed_load_leaves_existing_file(self, tmp_path):
        path = tmp_path / "m.ckpt"
        raw = C.save(path, self.make())
        with pytest.raises(C.CheckpointVocabError):
            C.load(path, "x")
        assert path.read_bytes() == raw
