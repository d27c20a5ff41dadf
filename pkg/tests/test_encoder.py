import numpy as np
import pytest

from t2tslu import autodiff as ad
from t2tslu.corpus import UNK_ID
from t2tslu.encoder import Encoder


@pytest.fixture
def encoder(tiny_vocab, rng):
    store = ad.ParamStore(dtype=np.float64)
    return Encoder(store, rng, len(tiny_vocab), embed_dim=6, hidden_dim=5)


def test_encode_utterance_shapes(encoder, tiny_vocab):
    tokens = ("set", "an", "alarm")
    enc = encoder.encode_utterance(tokens, tiny_vocab)
    assert len(enc.states) == 3
    assert enc.matrix.data.shape == (3, 5)
    assert enc.final_h.data.shape == (5,)
    assert enc.final_c.data.shape == (5,)
    assert enc.source_tokens == tokens
    np.testing.assert_array_equal(enc.matrix.data[-1], enc.final_h.data)


def test_encode_utterance_rejects_empty(encoder, tiny_vocab):
    with pytest.raises(ValueError):
        encoder.encode_utterance((), tiny_vocab)
    with pytest.raises(ValueError):
        encoder.encode_name((), tiny_vocab)


def test_oov_token_matches_explicit_unk(encoder, tiny_vocab):
    assert tiny_vocab.token(UNK_ID) == "<unk>"
    oov = encoder.encode_utterance(("set", "zzzz", "alarm"), tiny_vocab)
    unk = encoder.encode_utterance(("set", "<unk>", "alarm"), tiny_vocab)
    np.testing.assert_array_equal(oov.final_h.data, unk.final_h.data)


def test_unk_tokens_force_in_vocab_words_to_unk(encoder, tiny_vocab):
    plain = encoder.encode_utterance(("set", "an", "alarm"), tiny_vocab)
    dropped = encoder.encode_utterance(("set", "an", "alarm"), tiny_vocab,
                                       unk_tokens=frozenset({"alarm"}))
    explicit = encoder.encode_utterance(("set", "an", "<unk>"), tiny_vocab)
    assert not np.array_equal(plain.final_h.data, dropped.final_h.data)
    np.testing.assert_array_equal(dropped.final_h.data, explicit.final_h.data)


def test_encode_name_is_order_sensitive_pooled_vector(encoder, tiny_vocab):
    ab = encoder.encode_name(("set", "alarm"), tiny_vocab)
    ba = encoder.encode_name(("alarm", "set"), tiny_vocab)
    assert ab.data.shape == (5,)
    assert not np.array_equal(ab.data, ba.data)


def test_name_and_utterance_share_parameters(encoder, tiny_vocab):
    # a single-word name pools over one state, so it equals the final state
    # of a one-token utterance run through the same LSTM
    name = encoder.encode_name(("alarm",), tiny_vocab)
    utt = encoder.encode_utterance(("alarm",), tiny_vocab)
    np.testing.assert_array_equal(name.data, utt.final_h.data)


def test_encoding_deterministic_without_dropout(encoder, tiny_vocab):
    a = encoder.encode_utterance(("set", "an", "alarm"), tiny_vocab)
    b = encoder.encode_utterance(("set", "an", "alarm"), tiny_vocab)
    np.testing.assert_array_equal(a.final_h.data, b.final_h.data)


def test_dropout_changes_training_encoding(encoder, tiny_vocab):
    rng = np.random.default_rng(42)
    plain = encoder.encode_utterance(("set", "an", "alarm"), tiny_vocab)
    noisy = encoder.encode_utterance(("set", "an", "alarm"), tiny_vocab,
                                     keep_prob=0.5, rng=rng, training=True)
    assert not np.array_equal(plain.final_h.data, noisy.final_h.data)
