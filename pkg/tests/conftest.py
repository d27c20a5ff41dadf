import numpy as np
import pytest

from t2tslu.corpus import (TaggedExample, Vocab, extract_ontology,
                           normalize_name)


def make_tiny_examples():
    """Two-intent, two-slot fixture corpus shared across model tests."""
    return [
        TaggedExample(tokens=("set", "an", "alarm", "for", "friday"),
                      tags=("O", "O", "O", "O", "B-date_time"),
                      intent=normalize_name("set alarm")),
        TaggedExample(tokens=("cancel", "the", "work", "alarm"),
                      tags=("O", "O", "B-alarm_name", "I-alarm_name"),
                      intent=normalize_name("cancel alarm")),
        TaggedExample(tokens=("set", "the", "gym", "alarm", "for", "tonight"),
                      tags=("O", "O", "B-alarm_name", "I-alarm_name", "O",
                            "B-date_time"),
                      intent=normalize_name("set alarm")),
    ]


@pytest.fixture
def tiny_examples():
    return make_tiny_examples()


@pytest.fixture
def tiny_vocab(tiny_examples):
    return Vocab.build(tiny_examples)


@pytest.fixture
def tiny_ontology(tiny_examples):
    return extract_ontology(tiny_examples)


@pytest.fixture
def rng():
    return np.random.default_rng(0)
