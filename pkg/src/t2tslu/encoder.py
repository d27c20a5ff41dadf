"""Utterance encoder and ontology-name encoder (shared parameters).

A single-layer unidirectional LSTM over embedded tokens.  Ontology names
are encoded with the same LSTM and max-pooled over time into fixed-length
vectors, so name-word semantics transfer across domains.
"""

from __future__ import annotations

from dataclasses import dataclass

from . import autodiff as ad
from .corpus import UNK_ID, Vocab


@dataclass
class EncoderOutput:
    states: list            # h_1..h_n, one 1-D tensor per token
    matrix: ad.Tensor       # the same states stacked into (n, hidden)
    final_h: ad.Tensor
    final_c: ad.Tensor
    source_tokens: tuple    # tokens the states correspond to


class Encoder:
    def __init__(self, store: ad.ParamStore, rng, vocab_size: int,
                 embed_dim: int, hidden_dim: int):
        self.embed_dim = embed_dim
        self.hidden_dim = hidden_dim
        self.embedding = store.param("embedding", (vocab_size, embed_dim), rng=rng)
        self.w, self.b = ad.lstm_params(store, "encoder.lstm", embed_dim, hidden_dim, rng)
        self._zero = None

    def _zeros(self):
        import numpy as np
        return ad.tensor(np.zeros(self.hidden_dim), dtype=self.embedding.dtype)

    def _run(self, ids, keep_prob=1.0, rng=None, training=False):
        states = []
        h = self._zeros()
        c = self._zeros()
        for tid in ids:
            x = ad.embedding_lookup(self.embedding, int(tid))
            x = ad.dropout(x, keep_prob, rng, training)
            h, c = ad.lstm_step(self.w, self.b, x, h, c)
            states.append(h)
        return states, h, c

    def encode_utterance(self, tokens, vocab: Vocab, keep_prob=1.0, rng=None,
                         training=False, unk_tokens=frozenset()) -> EncoderOutput:
        """Encode a token sequence; OOV tokens map to the UNK embedding.

        unk_tokens holds word types forced to UNK (train-time word dropout);
        the same set must govern decoder-side feedback embeddings so dropped
        words look out-of-vocabulary consistently.
        """
        if len(tokens) == 0:
            raise ValueError("cannot encode an empty utterance")
        ids = [UNK_ID if tok in unk_tokens else tid
               for tok, tid in zip(tokens, vocab.ids(tokens))]
        states, h, c = self._run(ids, keep_prob, rng, training)
        return EncoderOutput(states=states, matrix=ad.stack(states),
                             final_h=h, final_c=c, source_tokens=tuple(tokens))

    def encode_name(self, words, vocab: Vocab, keep_prob=1.0, rng=None,
                    training=False) -> ad.Tensor:
        """Fixed-length name vector: encoder states max-pooled over time."""
        if len(words) == 0:
            raise ValueError("cannot encode an empty name")
        states, _, _ = self._run(vocab.ids(words), keep_prob, rng, training)
        return ad.max_pool_over_time(ad.stack(states))
