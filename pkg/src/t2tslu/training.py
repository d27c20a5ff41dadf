"""Teacher-forced training, best-epoch selection and checkpointing."""

from __future__ import annotations

import json
import logging
import struct
from dataclasses import asdict, dataclass, replace

import numpy as np

from . import autodiff as ad
from .constrained_decoder import ConstrainedModel
from .corpus import Ontology, Vocab, extract_ontology
from .evaluation import evaluate_model
from .pointer_decoder import PointerGeneratorModel

log = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"CT2T"
CHECKPOINT_VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    decoder: str = "ct2t"          # "ut2t" | "ct2t"
    hidden_dim: int = 256
    embed_dim: int = 256
    batch_size: int = 128
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.98
    eps: float = 1e-9
    dropout: float = 0.5           # drop rate; keep probability is 1 - dropout
    word_dropout: float = 0.0      # train-time UNK substitution, value-span words
    name_dropout: float = 0.0      # train-time UNK substitution, ontology names (ct2t)
    epochs: int = 50
    seed: int = 0
    max_decode_len: int = 60
    grad_clip: float = 0.0         # global-norm clip; 0 disables

    def validate(self):
        if self.decoder not in ("ut2t", "ct2t"):
            raise ValueError(f"unknown decoder kind {self.decoder!r}")
        if self.hidden_dim <= 0 or self.embed_dim <= 0:
            raise ValueError("dimensions must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError(f"dropout rate must be in [0, 1), got {self.dropout}")
        if not 0.0 <= self.word_dropout < 1.0:
            raise ValueError("word_dropout must be in [0, 1), "
                             f"got {self.word_dropout}")
        if not 0.0 <= self.name_dropout < 1.0:
            raise ValueError("name_dropout must be in [0, 1), "
                             f"got {self.name_dropout}")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        cfg = cls(**d)
        cfg.validate()
        return cfg


@dataclass
class Checkpoint:
    config: TrainConfig
    vocab: Vocab
    ontology: Ontology | None
    params: dict                   # name -> np.ndarray

    @property
    def kind(self) -> str:
        return self.config.decoder


def build_model(config: TrainConfig, vocab: Vocab, ontology: Ontology | None = None,
                dtype=None):
    config.validate()
    if config.decoder == "ut2t":
        model = PointerGeneratorModel(vocab, config.hidden_dim, config.embed_dim,
                                      seed=config.seed, dtype=dtype)
    else:
        if ontology is None:
            raise ValueError("ct2t model needs an ontology")
        model = ConstrainedModel(vocab, config.hidden_dim, config.embed_dim,
                                 ontology, seed=config.seed, dtype=dtype)
    model.word_dropout = config.word_dropout
    if config.decoder == "ct2t":
        model.name_dropout = config.name_dropout
    return model


def model_from_checkpoint(ckpt: Checkpoint, expect_kind: str | None = None):
    if expect_kind is not None and ckpt.kind != expect_kind:
        raise CheckpointError(f"checkpoint holds a {ckpt.kind!r} model, "
                              f"expected {expect_kind!r}")
    model = build_model(ckpt.config, ckpt.vocab, ckpt.ontology)
    model.store.load_state_dict(ckpt.params)
    return model


def _train_loop(model, config: TrainConfig, train_set, valid_set, log_fn=None):
    """Run the epoch loop; returns (best params, best accuracy, best epoch)."""
    rng = np.random.default_rng(config.seed)
    optimizer = ad.Adam(model.store, lr=config.lr, beta1=config.beta1,
                        beta2=config.beta2, eps=config.eps)
    keep_prob = 1.0 - config.dropout
    n = len(train_set)
    best_acc = -1.0
    best_epoch = -1
    best_params = model.store.state_dict()

    for epoch in range(config.epochs):
        order = rng.permutation(n)
        epoch_loss = 0.0
        for b, lo in enumerate(range(0, n, config.batch_size)):
            batch = [train_set[i] for i in order[lo:lo + config.batch_size]]
            total = None
            for ex in batch:
                loss = model.loss(ex, keep_prob=keep_prob, rng=rng)
                total = loss if total is None else ad.add(total, loss)
            mean_loss = ad.scale(total, 1.0 / len(batch))
            value = float(mean_loss.data)
            if not np.isfinite(value):
                raise ad.NumericError(f"non-finite loss at epoch {epoch} batch {b}")
            epoch_loss += value * len(batch)
            model.store.zero_grad()
            mean_loss.backward()
            if config.grad_clip > 0:
                ad.clip_grad_norm(model.store, config.grad_clip)
            optimizer.step()
        acc = evaluate_model(model, valid_set, config.max_decode_len).sentence_accuracy
        if acc > best_acc:   # ties keep the earlier epoch
            best_acc = acc
            best_epoch = epoch
            best_params = model.store.state_dict()
        if log_fn:
            log_fn(epoch=epoch, train_loss=epoch_loss / n, valid_accuracy=acc)
    return best_params, best_acc, best_epoch


def train(config: TrainConfig, train_set, valid_set, ontology: Ontology | None = None,
          log_fn=None) -> Checkpoint:
    """Train from scratch; returns the best-validation-epoch parameters."""
    config.validate()
    if not train_set or not valid_set:
        raise ValueError("train and valid sets must be nonempty")
    vocab = Vocab.build(train_set)
    if config.decoder == "ct2t" and ontology is None:
        ontology = extract_ontology(train_set)
    model = build_model(config, vocab, ontology)
    best_params, best_acc, best_epoch = _train_loop(model, config, train_set,
                                                    valid_set, log_fn)
    log.info("best epoch %d with validation sentence accuracy %.4f",
             best_epoch, best_acc)
    return Checkpoint(config=config, vocab=vocab, ontology=ontology,
                      params=best_params)


def fine_tune(ckpt: Checkpoint, train_set, valid_set, overrides: dict | None = None,
              ontology: Ontology | None = None, log_fn=None) -> Checkpoint:
    """Continue training from checkpoint parameters.

    The vocabulary stays fixed from source training; for ct2t a replacement
    (usually extended) ontology may be supplied, needing no new parameters.
    With epochs=0 this is a pure zero-shot re-targeting of the checkpoint.
    """
    config = replace(ckpt.config, **(overrides or {}))
    config.validate()
    for dim_field in ("decoder", "hidden_dim", "embed_dim"):
        if getattr(config, dim_field) != getattr(ckpt.config, dim_field):
            raise ValueError(f"fine_tune cannot change {dim_field} "
                             f"({getattr(ckpt.config, dim_field)} -> "
                             f"{getattr(config, dim_field)})")
    ontology = ontology if ontology is not None else ckpt.ontology
    if config.epochs == 0:
        return Checkpoint(config=config, vocab=ckpt.vocab, ontology=ontology,
                          params=dict(ckpt.params))
    model = build_model(config, ckpt.vocab, ontology)
    model.store.load_state_dict(ckpt.params)
    best_params, best_acc, best_epoch = _train_loop(model, config, train_set,
                                                    valid_set, log_fn)
    log.info("fine-tune best epoch %d with validation sentence accuracy %.4f",
             best_epoch, best_acc)
    return Checkpoint(config=config, vocab=ckpt.vocab, ontology=ontology,
                      params=best_params)


# ---------------------------------------------------------------------------
# checkpoint file format: magic, u32 version, u32 manifest byte length,
# manifest JSON, u32 tensor count, then per tensor: u32 name length, name,
# u32 rank, u32 dims..., raw float32 little-endian values.

def save_checkpoint(ckpt: Checkpoint, path):
    manifest = json.dumps({
        "config": ckpt.config.to_dict(),
        "vocab": ckpt.vocab.tokens,
        "ontology": ckpt.ontology.to_dict() if ckpt.ontology else None,
    }).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", CHECKPOINT_VERSION))
        fh.write(struct.pack("<I", len(manifest)))
        fh.write(manifest)
        fh.write(struct.pack("<I", len(ckpt.params)))
        for name in sorted(ckpt.params):
            # asarray keeps 0-d shapes; ascontiguousarray would promote to 1-d
            arr = np.asarray(ckpt.params[name], dtype="<f4", order="C")
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<I", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.tobytes())


def _read_exact(fh, size, what):
    data = fh.read(size)
    if len(data) != size:
        raise CheckpointError(f"truncated checkpoint file while reading {what}")
    return data


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        if _read_exact(fh, 4, "magic") != CHECKPOINT_MAGIC:
            raise CheckpointError("not a checkpoint file (bad magic bytes)")
        version, = struct.unpack("<I", _read_exact(fh, 4, "version"))
        if version != CHECKPOINT_VERSION:
            raise CheckpointError(f"unsupported checkpoint version {version}")
        manifest_len, = struct.unpack("<I", _read_exact(fh, 4, "manifest length"))
        manifest = json.loads(_read_exact(fh, manifest_len, "manifest"))
        config = TrainConfig.from_dict(manifest["config"])
        vocab = Vocab(manifest["vocab"])
        ontology = (Ontology.from_dict(manifest["ontology"])
                    if manifest["ontology"] else None)
        count, = struct.unpack("<I", _read_exact(fh, 4, "tensor count"))
        params = {}
        for _ in range(count):
            name_len, = struct.unpack("<I", _read_exact(fh, 4, "tensor name length"))
            name = _read_exact(fh, name_len, "tensor name").decode("utf-8")
            rank, = struct.unpack("<I", _read_exact(fh, 4, "tensor rank"))
            dims = struct.unpack(f"<{rank}I",
                                 _read_exact(fh, 4 * rank, "tensor dims"))
            size = int(np.prod(dims)) if rank else 1
            raw = _read_exact(fh, 4 * size, f"tensor data for {name}")
            params[name] = np.frombuffer(raw, dtype="<f4").reshape(dims).copy()
    return Checkpoint(config=config, vocab=vocab, ontology=ontology, params=params)
