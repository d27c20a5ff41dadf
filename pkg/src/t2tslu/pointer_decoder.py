"""Unconstrained seq2seq decoder with a copy mechanism ("ut2t").

Generates the serialized frame sequence token by token over the training
vocabulary, mixing the generator softmax with attention-based copying of
source words so out-of-vocabulary slot values remain reachable.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .corpus import (EOS_TOKEN, PAIR_SEP, UNK_ID, VALUE_SEP, TaggedExample,
                     Vocab, build_target_frame)
from .encoder import Encoder, EncoderOutput
from .frames import ParseError, parse_output, serialize_frame

log = logging.getLogger(__name__)


@dataclass
class StepDistribution:
    """Numpy view of one decode step, for invariant checks and decoding."""
    attention: np.ndarray      # over source positions
    vocab_probs: np.ndarray    # over the generator vocabulary
    gate: float                # generation probability p_gen
    final: np.ndarray          # over vocab + extended OOV source words
    extended_tokens: list      # OOV source words, first-occurrence order


@dataclass
class DecodeResult:
    tokens: list
    truncated: bool


@dataclass
class PredictResult:
    frame: object              # Frame or None
    parse_error: object        # ParseError or None
    output_tokens: list
    truncated: bool


def _const(like: ad.Tensor, value: float) -> ad.Tensor:
    return ad.tensor(np.asarray(value, dtype=like.dtype))


def one_minus(gate: ad.Tensor) -> ad.Tensor:
    return ad.scale(ad.add(gate, _const(gate, -1.0)), -1.0)


def mix_final_distribution(gate: float, vocab_probs: np.ndarray,
                           attention: np.ndarray, source_tokens, vocab: Vocab):
    """Mixture of generator and copy mass over the extended vocabulary.

    Returns (final, extended_tokens).  Source positions holding literal
    separators are excluded from the copy candidates.
    """
    final = gate * vocab_probs
    extended_tokens: list[str] = []
    ext_index: dict[str, int] = {}
    ext_mass: list[float] = []
    for i, tok in enumerate(source_tokens):
        if tok in (PAIR_SEP, VALUE_SEP):
            continue
        copy = (1.0 - gate) * attention[i]
        if tok in vocab:
            final[vocab.id(tok)] += copy
        else:
            if tok not in ext_index:
                ext_index[tok] = len(extended_tokens)
                extended_tokens.append(tok)
                ext_mass.append(0.0)
            ext_mass[ext_index[tok]] += copy
    return np.concatenate([final, np.asarray(ext_mass, dtype=final.dtype)]), extended_tokens


class PointerGeneratorModel:
    kind = "ut2t"

    def __init__(self, vocab: Vocab, hidden_dim: int, embed_dim: int,
                 seed: int = 0, dtype=None):
        self.vocab = vocab
        self.hidden_dim = hidden_dim
        self.embed_dim = embed_dim
        self.store = ad.ParamStore(dtype=dtype)
        rng = np.random.default_rng(seed)
        self.encoder = Encoder(self.store, rng, len(vocab), embed_dim, hidden_dim)
        self.dec_w, self.dec_b = ad.lstm_params(self.store, "decoder.lstm",
                                                embed_dim, hidden_dim, rng)
        p = self.store.param
        self.w_att = p("attention.W", (hidden_dim, hidden_dim), rng=rng)
        # feature layer m_t; vocab logits come from the tied embedding matrix
        self.w_out = p("output.W", (embed_dim, 2 * hidden_dim), rng=rng)
        self.b_out = p("output.b", (embed_dim,), init="zeros")
        self.gate_w_m = p("gate.w_m", (embed_dim,), rng=rng)
        self.gate_w_s = p("gate.w_s", (hidden_dim,), rng=rng)
        self.gate_w_e = p("gate.w_e", (embed_dim,), rng=rng)
        self.gate_b = p("gate.b", (), init="zeros")
        self.start = p("decoder.start", (embed_dim,), rng=rng)
        self.zero_prob_count = 0
        self.word_dropout = 0.0   # train-time UNK substitution probability

    # -- core step ---------------------------------------------------------

    def _embed(self, token: str, keep_prob=1.0, rng=None, training=False,
               unk_tokens=frozenset()):
        tid = UNK_ID if token in unk_tokens else self.vocab.id(token)
        return ad.dropout(ad.embedding_lookup(self.encoder.embedding, tid),
                          keep_prob, rng, training)

    def _sample_unk_tokens(self, example, rng, training):
        """Word types forced to UNK this example (train-time word dropout).

        Only value-span words are candidates: at test time the unseen words
        are slot values, while carrier words stay in vocabulary.  The sampled
        set must apply to the encoder input and the decoder feedback alike so
        a dropped word looks out-of-vocabulary end to end.
        """
        if not training or self.word_dropout <= 0.0 or rng is None:
            return frozenset()
        spans = dict.fromkeys(t for t, tag in zip(example.tokens, example.tags)
                              if tag != "O")
        return frozenset(t for t in spans if rng.random() < self.word_dropout)

    def _step(self, prev_emb, h, c, enc: EncoderOutput, keep_prob=1.0,
              rng=None, training=False, gate_override=None):
        h, c = ad.lstm_step(self.dec_w, self.dec_b, prev_emb, h, c)
        s = h
        scores = ad.matmul(enc.matrix, ad.matmul(s, self.w_att))
        alpha = ad.softmax(scores)
        ctx = ad.matmul(alpha, enc.matrix)
        m = ad.tanh(ad.add(ad.matmul(self.w_out, ad.concat([ctx, s])), self.b_out))
        m = ad.dropout(m, keep_prob, rng, training)
        pvocab = ad.softmax(ad.matmul(self.encoder.embedding, m))
        if gate_override is None:
            gate = ad.sigmoid(ad.add(ad.add(ad.dot(self.gate_w_m, m),
                                            ad.dot(self.gate_w_s, s)),
                                     ad.add(ad.dot(self.gate_w_e, prev_emb),
                                            self.gate_b)))
        else:
            gate = _const(m, float(gate_override))
        return {"alpha": alpha, "pvocab": pvocab, "gate": gate, "s": s}, h, c

    def step_distribution(self, prev_emb, h, c, enc: EncoderOutput,
                          gate_override=None):
        """Inference-time step view over the extended vocabulary."""
        with ad.no_grad():
            pieces, h, c = self._step(prev_emb, h, c, enc,
                                      gate_override=gate_override)
        gate = float(pieces["gate"].data)
        final, ext = mix_final_distribution(gate, pieces["pvocab"].data,
                                            pieces["alpha"].data,
                                            enc.source_tokens, self.vocab)
        return StepDistribution(attention=pieces["alpha"].data,
                                vocab_probs=pieces["pvocab"].data,
                                gate=gate, final=final,
                                extended_tokens=ext), h, c

    # -- training ----------------------------------------------------------

    def loss(self, example: TaggedExample, keep_prob=1.0, rng=None) -> ad.Tensor:
        """Teacher-forced negative log-likelihood of the serialized frame."""
        training = keep_prob < 1.0 or self.word_dropout > 0.0
        unk_tokens = self._sample_unk_tokens(example, rng, training)
        enc = self.encoder.encode_utterance(example.tokens, self.vocab,
                                            keep_prob, rng, training,
                                            unk_tokens=unk_tokens)
        target = serialize_frame(build_target_frame(example))
        h, c = enc.final_h, enc.final_c
        prev = ad.dropout(self.start, keep_prob, rng, training)
        total = None
        for word in target:
            pieces, h, c = self._step(prev, h, c, enc, keep_prob, rng, training)
            terms = []
            if word in self.vocab and word not in unk_tokens:
                terms.append(ad.mul(pieces["gate"],
                                    ad.gather(pieces["pvocab"], self.vocab.id(word))))
            positions = [i for i, tok in enumerate(example.tokens) if tok == word]
            if positions:
                copy_mass = ad.sum_all(ad.gather(pieces["alpha"], positions))
                terms.append(ad.mul(one_minus(pieces["gate"]), copy_mass))
            if not terms:
                self.zero_prob_count += 1
                log.warning("target word %r has zero total probability", word)
                prob = _const(pieces["gate"], 0.0)
            else:
                prob = terms[0]
                for t in terms[1:]:
                    prob = ad.add(prob, t)
            step_loss = ad.scale(ad.log(ad.clamp_min(prob, ad.PROB_CLAMP)), -1.0)
            total = step_loss if total is None else ad.add(total, step_loss)
            prev = self._embed(word, keep_prob, rng, training, unk_tokens)
        return total

    # -- inference ---------------------------------------------------------

    def decode(self, tokens, max_len=60, gate_override=None) -> DecodeResult:
        """Greedy decode; ties go to the lowest token id."""
        with ad.no_grad():
            enc = self.encoder.encode_utterance(tokens, self.vocab)
            h, c = enc.final_h, enc.final_c
            prev = self.start
            out = []
            for _ in range(max_len):
                dist, h, c = self.step_distribution(prev, h, c, enc,
                                                    gate_override=gate_override)
                choice = int(np.argmax(dist.final))
                if choice < len(self.vocab):
                    word = self.vocab.token(choice)
                else:
                    word = dist.extended_tokens[choice - len(self.vocab)]
                out.append(word)
                if word == EOS_TOKEN:
                    return DecodeResult(tokens=out, truncated=False)
                prev = self._embed(word)
            log.warning("decode truncated at max_len=%d", max_len)
            return DecodeResult(tokens=out, truncated=True)

    def predict(self, tokens, max_len=60) -> PredictResult:
        dec = self.decode(tokens, max_len=max_len)
        parsed = parse_output(dec.tokens)
        if isinstance(parsed, ParseError):
            return PredictResult(frame=None, parse_error=parsed,
                                 output_tokens=dec.tokens, truncated=dec.truncated)
        return PredictResult(frame=parsed, parse_error=None,
                             output_tokens=dec.tokens, truncated=dec.truncated)
