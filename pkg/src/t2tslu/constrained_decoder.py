"""Ontology-constrained decoder ("ct2t").

Step one attends over encoded intent-name vectors and emits a whole intent.
Every later step mixes a distribution over slot-name vectors (plus a
learned end-of-sequence pseudo-slot) with attention-based copying of source
words, gated by a soft switch.  Decoded intents and slot names are members
of the supplied ontology by construction, for any parameter values.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .corpus import (PAIR_SEP, UNK, UNK_ID, VALUE_SEP, CorpusError, Frame,
                     Ontology, TaggedExample, Vocab, build_target_frame)
from .encoder import Encoder, EncoderOutput
from .frames import serialize_frame
from .pointer_decoder import PredictResult, _const, one_minus

log = logging.getLogger(__name__)


@dataclass
class SlotStepDistribution:
    """Numpy view of one slot/value step."""
    slot_probs: np.ndarray     # gamma over slots + EOS pseudo-slot (last entry)
    attention: np.ndarray      # alpha over source positions
    gate: float                # p_slot
    joint: np.ndarray          # [p_slot*gamma..., (1-p_slot)*copy mass per word]
    word_candidates: list      # distinct copyable source words, occurrence order


@dataclass
class FrameDecodeResult:
    frame: Frame
    truncated: bool


class ConstrainedModel:
    kind = "ct2t"

    def __init__(self, vocab: Vocab, hidden_dim: int, embed_dim: int,
                 ontology: Ontology, seed: int = 0, dtype=None):
        if not ontology.intents:
            raise ValueError("ontology has no intents")
        self.vocab = vocab
        self.hidden_dim = hidden_dim
        self.embed_dim = embed_dim
        self.ontology = ontology
        self.store = ad.ParamStore(dtype=dtype)
        rng = np.random.default_rng(seed)
        self.encoder = Encoder(self.store, rng, len(vocab), embed_dim, hidden_dim)
        self.dec_w, self.dec_b = ad.lstm_params(self.store, "decoder.lstm",
                                                embed_dim, hidden_dim, rng)
        p = self.store.param
        self.w_intent = p("intent.W", (hidden_dim, hidden_dim), rng=rng)
        self.w_slot = p("slot.W", (hidden_dim, hidden_dim), rng=rng)
        self.w_copy = p("copy.W", (hidden_dim, hidden_dim), rng=rng)
        self.w_feat = p("feature.W", (hidden_dim, 2 * hidden_dim), rng=rng)
        self.b_feat = p("feature.b", (hidden_dim,), init="zeros")
        self.gate_w_m = p("gate.w_m", (hidden_dim,), rng=rng)
        self.gate_w_s = p("gate.w_s", (hidden_dim,), rng=rng)
        self.gate_w_e = p("gate.w_e", (embed_dim,), rng=rng)
        self.gate_b = p("gate.b_slot", (), init="zeros")
        self.start = p("decoder.start", (embed_dim,), rng=rng)
        self.slot_eos = p("slot.eos_vector", (hidden_dim,), rng=rng)
        self.word_dropout = 0.0   # train-time UNK substitution, value-span words
        self.name_dropout = 0.0   # train-time UNK substitution, ontology name words

    def set_ontology(self, ontology: Ontology):
        """Swap the decoding ontology; needs no parameter changes."""
        if not ontology.intents:
            raise ValueError("ontology has no intents")
        self.ontology = ontology

    # -- name encodings ------------------------------------------------------

    def _masked_name(self, words, unk_tokens):
        return tuple(UNK if w in unk_tokens else w for w in words)

    def _intent_vectors(self, keep_prob=1.0, rng=None, training=False,
                        unk_tokens=frozenset()):
        return ad.stack([self.encoder.encode_name(self._masked_name(name, unk_tokens),
                                                  self.vocab, keep_prob, rng, training)
                         for name in self.ontology.intents])

    def _slot_vectors(self, keep_prob=1.0, rng=None, training=False,
                      unk_tokens=frozenset()):
        vecs = [self.encoder.encode_name(self._masked_name(name, unk_tokens),
                                         self.vocab, keep_prob, rng, training)
                for name in self.ontology.slots]
        vecs.append(self.slot_eos)  # EOS pseudo-slot terminates decoding
        return ad.stack(vecs)

    def _name_embedding(self, words, keep_prob=1.0, rng=None, training=False,
                        unk_tokens=frozenset()):
        """Previous-input embedding after a multi-word name: mean of its words."""
        ids = self.vocab.ids(self._masked_name(words, unk_tokens))
        emb = ad.embedding_lookup(self.encoder.embedding, ids)
        return ad.dropout(ad.mean_rows(emb), keep_prob, rng, training)

    def _word_embedding(self, word, keep_prob=1.0, rng=None, training=False,
                        unk_tokens=frozenset()):
        tid = UNK_ID if word in unk_tokens else self.vocab.id(word)
        return ad.dropout(ad.embedding_lookup(self.encoder.embedding, tid),
                          keep_prob, rng, training)

    def _sample_unk_tokens(self, example, rng, training):
        """Word types forced to UNK this example (train-time word dropout).

        Value-span words (word_dropout) mirror out-of-vocabulary slot values;
        ontology name words (name_dropout) mirror held-out-domain intent and
        slot names.  The sampled set applies consistently to the encoder
        input, the decoder feedback and the name encodings, so a dropped word
        looks out-of-vocabulary everywhere at once.
        """
        if not training or rng is None:
            return frozenset()
        dropped = []
        if self.word_dropout > 0.0:
            spans = dict.fromkeys(t for t, tag in zip(example.tokens, example.tags)
                                  if tag != "O")
            dropped += [t for t in spans if rng.random() < self.word_dropout]
        if self.name_dropout > 0.0:
            names = dict.fromkeys(
                w for name in self.ontology.intents + self.ontology.slots
                for w in name)
            dropped += [t for t in names if rng.random() < self.name_dropout]
        return frozenset(dropped)

    # -- steps ---------------------------------------------------------------

    def _advance(self, prev_emb, h, c):
        return ad.lstm_step(self.dec_w, self.dec_b, prev_emb, h, c)

    def _intent_step(self, s, intent_mat):
        return ad.softmax(ad.matmul(intent_mat, ad.matmul(s, self.w_intent)))

    def _slot_step(self, s, prev_emb, enc: EncoderOutput, slot_mat,
                   keep_prob=1.0, rng=None, training=False, gate_override=None):
        gamma = ad.softmax(ad.matmul(slot_mat, ad.matmul(s, self.w_slot)))
        alpha = ad.softmax(ad.matmul(enc.matrix, ad.matmul(s, self.w_copy)))
        ctx = ad.matmul(alpha, enc.matrix)
        m = ad.tanh(ad.add(ad.matmul(self.w_feat, ad.concat([ctx, s])), self.b_feat))
        m = ad.dropout(m, keep_prob, rng, training)
        if gate_override is None:
            gate = ad.sigmoid(ad.add(ad.add(ad.dot(self.gate_w_m, m),
                                            ad.dot(self.gate_w_s, s)),
                                     ad.add(ad.dot(self.gate_w_e, prev_emb),
                                            self.gate_b)))
        else:
            gate = _const(m, float(gate_override))
        return {"gamma": gamma, "alpha": alpha, "gate": gate}

    def slot_step_distribution(self, s, prev_emb, enc: EncoderOutput, slot_mat,
                               gate_override=None) -> SlotStepDistribution:
        with ad.no_grad():
            pieces = self._slot_step(s, prev_emb, enc, slot_mat,
                                     gate_override=gate_override)
        gamma = pieces["gamma"].data
        alpha = pieces["alpha"].data
        gate = float(pieces["gate"].data)
        words: list[str] = []
        index: dict[str, int] = {}
        mass: list[float] = []
        for i, tok in enumerate(enc.source_tokens):
            if tok in (PAIR_SEP, VALUE_SEP):
                continue
            if tok not in index:
                index[tok] = len(words)
                words.append(tok)
                mass.append(0.0)
            mass[index[tok]] += (1.0 - gate) * alpha[i]
        joint = np.concatenate([gate * gamma, np.asarray(mass, dtype=gamma.dtype)])
        return SlotStepDistribution(slot_probs=gamma, attention=alpha,
                                    gate=gate, joint=joint, word_candidates=words)

    # -- training --------------------------------------------------------------

    def _gold_plan(self, example: TaggedExample):
        frame = build_target_frame(example)
        try:
            plan = [("intent", self.ontology.intents.index(frame.intent))]
        except ValueError:
            raise CorpusError(f"gold intent {frame.intent} not in ontology") from None
        for name, value in frame.slots:
            try:
                plan.append(("slot", self.ontology.slots.index(name)))
            except ValueError:
                raise CorpusError(f"gold slot {name} not in ontology") from None
            for word in value:
                positions = [i for i, tok in enumerate(example.tokens) if tok == word]
                if not positions:
                    raise CorpusError(f"gold value word {word!r} absent from source")
                plan.append(("value", word, positions))
        plan.append(("stop",))
        return plan

    def loss(self, example: TaggedExample, keep_prob=1.0, rng=None) -> ad.Tensor:
        """Teacher-forced cross-entropy over the gold step plan."""
        training = (keep_prob < 1.0 or self.word_dropout > 0.0
                    or self.name_dropout > 0.0)
        unk_tokens = self._sample_unk_tokens(example, rng, training)
        enc = self.encoder.encode_utterance(example.tokens, self.vocab,
                                            keep_prob, rng, training,
                                            unk_tokens=unk_tokens)
        intent_mat = self._intent_vectors(keep_prob, rng, training, unk_tokens)
        slot_mat = self._slot_vectors(keep_prob, rng, training, unk_tokens)
        eos_index = len(self.ontology.slots)
        h, c = enc.final_h, enc.final_c
        prev = ad.dropout(self.start, keep_prob, rng, training)
        total = None
        for step in self._gold_plan(example):
            h, c = self._advance(prev, h, c)
            s = h
            if step[0] == "intent":
                delta = self._intent_step(s, intent_mat)
                prob = ad.gather(delta, step[1])
                prev = self._name_embedding(self.ontology.intents[step[1]],
                                            keep_prob, rng, training, unk_tokens)
            else:
                pieces = self._slot_step(s, prev, enc, slot_mat,
                                         keep_prob, rng, training)
                if step[0] == "slot":
                    prob = ad.mul(pieces["gate"], ad.gather(pieces["gamma"], step[1]))
                    prev = self._name_embedding(self.ontology.slots[step[1]],
                                                keep_prob, rng, training, unk_tokens)
                elif step[0] == "value":
                    copy_mass = ad.sum_all(ad.gather(pieces["alpha"], step[2]))
                    prob = ad.mul(one_minus(pieces["gate"]), copy_mass)
                    prev = self._word_embedding(step[1], keep_prob, rng, training,
                                                unk_tokens)
                else:  # stop
                    prob = ad.mul(pieces["gate"], ad.gather(pieces["gamma"], eos_index))
            step_loss = ad.scale(ad.log(ad.clamp_min(prob, ad.PROB_CLAMP)), -1.0)
            total = step_loss if total is None else ad.add(total, step_loss)
        return total

    # -- inference --------------------------------------------------------------

    def decode_frame(self, tokens, max_len=60, gate_override=None) -> FrameDecodeResult:
        """Greedy constrained decode straight to a Frame."""
        with ad.no_grad():
            enc = self.encoder.encode_utterance(tokens, self.vocab)
            intent_mat = self._intent_vectors()
            slot_mat = self._slot_vectors()
            eos_index = len(self.ontology.slots)
            h, c = self._advance(self.start, enc.final_h, enc.final_c)
            delta = self._intent_step(h, intent_mat)
            intent_idx = int(np.argmax(delta.data))
            intent = self.ontology.intents[intent_idx]
            prev = self._name_embedding(intent)

            slots: list[tuple] = []
            open_idx: int | None = None
            open_value: list[str] = []

            def close_pair():
                if open_idx is not None:
                    slots.append((self.ontology.slots[open_idx], tuple(open_value)))

            for _ in range(max_len - 1):
                h, c = self._advance(prev, h, c)
                dist = self.slot_step_distribution(h, prev, enc, slot_mat,
                                                   gate_override=gate_override)
                joint = dist.joint.copy()
                if open_idx is None:
                    # a value before any slot name is unserializable: mask it
                    joint[eos_index + 1:] = -1.0
                choice = int(np.argmax(joint))
                if choice == eos_index:
                    close_pair()
                    return FrameDecodeResult(Frame(intent=intent, slots=tuple(slots)),
                                             truncated=False)
                if choice < eos_index:
                    close_pair()
                    open_idx = choice
                    open_value = []
                    prev = self._name_embedding(self.ontology.slots[choice])
                else:
                    word = dist.word_candidates[choice - eos_index - 1]
                    open_value.append(word)
                    prev = self._word_embedding(word)
            close_pair()
            log.warning("constrained decode truncated at max_len=%d", max_len)
            return FrameDecodeResult(Frame(intent=intent, slots=tuple(slots)),
                                     truncated=True)

    def predict(self, tokens, max_len=60) -> PredictResult:
        res = self.decode_frame(tokens, max_len=max_len)
        return PredictResult(frame=res.frame, parse_error=None,
                             output_tokens=serialize_frame(res.frame),
                             truncated=res.truncated)
