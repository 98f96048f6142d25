import pytest
from hypothesis import given, strategies as st

from agdst.core import Schema, StructuralError
from agdst.vocab import (
    FIXED_SPECIALS,
    UNK,
    TokenKind,
    Vocabulary,
    build_vocab,
    special_tokens,
    tokenize,
)

SCHEMA = Schema.from_names(["restaurant-area", "taxi-departure"])

REQUIRED = {"<gen/>", "</gen>", "<amend/>", "</amend>", "<con/>", "</con>", "<sys>", "<usr>",
            "<ds/>", "</ds>", "<nm>", "<dc>", "<name/>", "</name>", "<pad>", "<eos>"}


def test_registry_is_exact():
    surfaces = [t.surface for t in special_tokens(SCHEMA)]
    assert len(surfaces) == len(set(surfaces))
    assert set(surfaces) == REQUIRED | {"<restaurant-area>", "<taxi-departure>"}
    slot_tokens = [t for t in special_tokens(SCHEMA) if t.kind is TokenKind.SLOT_NAME]
    assert len(slot_tokens) == len(SCHEMA)


class TestTokenize:
    def test_whitespace(self):
        assert tokenize("i will be dining alone") == ["i", "will", "be", "dining", "alone"]

    def test_name_markers_atomic(self):
        assert tokenize("<name/> kettle's yard </name>") == ["<name/>", "kettle's", "yard", "</name>"]

    def test_glued_markers_split(self):
        assert tokenize("<name/>camboats</name>") == ["<name/>", "camboats", "</name>"]

    def test_empty(self):
        assert tokenize("") == []

    def test_unregistered_brackets_stay_words(self):
        assert tokenize("a<b>c") == ["a<b>c"]


class TestBuildVocab:
    def test_min_freq_hand_count(self):
        v = build_vocab(["book a table", "a table for two"], SCHEMA, min_freq=2)
        words = v.tokens[v.n_special + 1:]
        assert set(words) == {"a", "table"}

    def test_empty_corpus(self):
        v = build_vocab([], SCHEMA)
        assert len(v) == len(special_tokens(SCHEMA)) + 1

    def test_deterministic(self):
        text = ["book a table", "a table for two", "two nights"]
        assert build_vocab(text, SCHEMA).tokens == build_vocab(list(text), SCHEMA).tokens

    def test_specials_lead_and_unk_follows(self):
        v = build_vocab(["hello"], SCHEMA)
        assert v.tokens[: len(FIXED_SPECIALS)] == tuple(t.surface for t in FIXED_SPECIALS)
        assert v.tokens[v.n_special] == UNK

    def test_bad_min_freq(self):
        with pytest.raises(ValueError):
            build_vocab([], SCHEMA, min_freq=0)

    def test_special_ids_stable_across_corpora(self):
        a = build_vocab(["x y z"], SCHEMA)
        b = build_vocab(["completely different words"], SCHEMA)
        assert a.tokens[: a.n_special] == b.tokens[: b.n_special]


class TestEncodeDecode:
    def setup_method(self):
        self.v = build_vocab(["book a table for two", "the cheap one"], SCHEMA)

    def test_round_trip(self):
        toks = ["<gen/>", "book", "<restaurant-area>", "cheap", "</gen>"]
        assert self.v.decode(self.v.encode(toks)) == toks

    def test_oov(self):
        assert self.v.encode(["zebra"]) == [self.v.unk_id]

    def test_out_of_range(self):
        with pytest.raises(StructuralError):
            self.v.decode([len(self.v)])
        with pytest.raises(StructuralError):
            self.v.decode([-1])

    def test_save_load(self, tmp_path):
        path = tmp_path / "vocab.txt"
        self.v.save(path)
        first = path.read_text().splitlines()[0]
        assert first.startswith("# agdst-vocab v1")
        loaded = Vocabulary.load(path)
        assert loaded.tokens == self.v.tokens
        assert loaded.hash == self.v.hash

    def test_load_rejects_other_files(self, tmp_path):
        path = tmp_path / "x.txt"
        path.write_text("hello\n")
        with pytest.raises(StructuralError):
            Vocabulary.load(path)

    @given(st.lists(st.integers(min_value=0, max_value=40), max_size=30))
    def test_encode_decode_identity_on_ids(self, ids):
        v = build_vocab(["book a table for two", "the cheap one"], SCHEMA)
        ids = [i % len(v) for i in ids]
        assert v.encode(v.decode(ids)) == ids


@given(st.text(alphabet="abc xyz'.,", max_size=40))
def test_plain_text_never_yields_specials(text):
    registry = {t.surface for t in special_tokens(SCHEMA)}
    assert not any(t in registry for t in tokenize(text))


def test_extra_words_appended_last(small_schema):
    base = build_vocab(["north north centre"], small_schema)
    v = build_vocab(["north north centre"], small_schema, extra=["centre", "south bank", "north"])
    assert v.tokens[: len(base)] == base.tokens
    assert list(v.tokens[len(base):]) == ["bank", "south"]
