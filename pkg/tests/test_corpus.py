from collections import Counter

import pytest
from hypothesis import given, strategies as st

from damp import minilang as ml
from damp.corpus import (
    DEFAULT_LABELS,
    DegenerateSplit,
    GeneratorConfig,
    dump_jsonl,
    generate_corpus,
    load_jsonl,
    split_dataset,
)


@pytest.fixture(scope="module")
def default_corpus():
    return generate_corpus(GeneratorConfig())


def test_generation_is_deterministic():
    cfg = GeneratorConfig(methods_per_label=10)
    assert dump_jsonl(generate_corpus(cfg)) == dump_jsonl(generate_corpus(cfg))
    other = GeneratorConfig(methods_per_label=10, seed=8)
    assert dump_jsonl(generate_corpus(other)) != dump_jsonl(generate_corpus(cfg))


def test_default_size_and_histogram(default_corpus):
    assert len(default_corpus) == 2000
    assert Counter(l for _, l in default_corpus) == {l: 250 for l in DEFAULT_LABELS}


def test_every_method_round_trips_and_has_variables(default_corpus):
    for ast, label in default_corpus:
        assert ast.label == label
        assert ml.parse(ml.pretty_print(ast)) == ast
        assert ml.variable_names(ast)


def test_jsonl_round_trip():
    data = generate_corpus(GeneratorConfig(methods_per_label=5))
    assert load_jsonl(dump_jsonl(data)) == data


def test_unknown_template():
    with pytest.raises(ValueError):
        GeneratorConfig(labels=("sort",))
    with pytest.raises(ValueError):
        GeneratorConfig(labels=())


def test_default_split_sizes(default_corpus):
    train, valid, test = split_dataset(default_corpus, (0.8, 0.1, 0.1), 0)
    assert (len(train), len(valid), len(test)) == (1600, 200, 200)
    assert split_dataset(default_corpus, (0.8, 0.1, 0.1), 0) == (train, valid, test)
    for part in (train, valid, test):
        assert set(l for _, l in part) == set(DEFAULT_LABELS)
    texts = [{ml.pretty_print(a) for a, _ in part} for part in (train, valid, test)]
    assert not (texts[0] & texts[1] or texts[0] & texts[2] or texts[1] & texts[2])


def test_generated_methods_are_distinct(default_corpus):
    texts = [ml.pretty_print(a) for a, _ in default_corpus]
    assert len(set(texts)) == len(texts)


@given(st.integers(0, 1000))
def test_split_is_a_partition(seed):
    data = generate_corpus(GeneratorConfig(methods_per_label=10, labels=("sum", "max", "count")))
    parts = split_dataset(data, (0.6, 0.2, 0.2), seed)
    assert sorted(map(id, sum(parts, []))) == sorted(map(id, data))
    for part in parts:
        assert Counter(l for _, l in part) == {"sum": len(part) // 3, "max": len(part) // 3,
                                               "count": len(part) // 3}


def test_split_validation():
    data = generate_corpus(GeneratorConfig(methods_per_label=2, labels=("sum",)))
    with pytest.raises(ValueError):
        split_dataset(data, (0.5, 0.5))
    with pytest.raises(DegenerateSplit):
        split_dataset(data, (0.8, 0.1, 0.1))
