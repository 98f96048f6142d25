import random
import sys

import pytest
from hypothesis import strategies as st

from agdst import kernels
from agdst.core import DONT_CARE, NOT_MENTIONED, Schema
from agdst.corpus import default_synthetic_spec, generate_synthetic, split
from agdst.vocab import build_vocab
from agdst.corpus import corpus_text, ontology_text

WORDS = ["centre", "north", "cheap", "indian", "2", "the", "gallery", "camboats", "kettle's", "yard", "11:45"]


@pytest.fixture(params=kernels.available_backends())
def backend(request):
    prev = kernels.BACKEND
    kernels.set_backend(request.param)
    yield request.param
    kernels.set_backend(prev)


@pytest.fixture
def small_schema():
    return Schema.from_names(
        ["restaurant-area", "restaurant-people", "taxi-departure", "taxi-destination"],
        {"restaurant-area": ["centre", "north"], "restaurant-people": ["1", "2", "3"]},
        [("taxi-departure", "taxi-destination")],
    )


@pytest.fixture(scope="session")
def tiny_corpus():
    """40 synthetic dialogues with their schema, splits and vocabulary."""
    recs = generate_synthetic(default_synthetic_spec(dialogue_count=40))
    schema = recs[0].schema
    tr, va, te = split(recs)
    vocab = build_vocab(corpus_text(tr), schema, extra=ontology_text(schema))
    return schema, tr, va, te, vocab


def random_value(rng: random.Random) -> str:
    r = rng.random()
    if r < 0.3:
        return NOT_MENTIONED
    if r < 0.4:
        return DONT_CARE
    return " ".join(rng.choice(WORDS) for _ in range(rng.randint(1, 3)))


def random_schema(rng: random.Random, max_slots: int = 8) -> Schema:
    n = rng.randint(1, max_slots)
    domains = ["hotel", "taxi", "train", "restaurant"]
    names = []
    for i in range(n):
        names.append(f"{rng.choice(domains)}-s{i}")
    return Schema.from_names(names)


def random_state(schema: Schema, rng: random.Random):
    return schema.state({s: random_value(rng) for s in schema})


value_strategy = st.one_of(
    st.just(NOT_MENTIONED),
    st.just(DONT_CARE),
    st.lists(st.sampled_from(WORDS), min_size=1, max_size=3).map(" ".join),
)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
