import numpy as np
import pytest

from t2tslu import training
from t2tslu.corpus import Ontology, Vocab, extract_ontology
from t2tslu.training import (Checkpoint, CheckpointError, TrainConfig,
                             build_model, fine_tune, load_checkpoint,
                             model_from_checkpoint, save_checkpoint, train)

SMALL = dict(hidden_dim=8, embed_dim=8, batch_size=2, epochs=2, dropout=0.0)


def test_train_config_validation():
    TrainConfig().validate()
    for bad in (dict(decoder="bogus"), dict(hidden_dim=0), dict(embed_dim=-1),
                dict(dropout=1.0), dict(dropout=-0.1), dict(word_dropout=1.0),
                dict(name_dropout=-0.5), dict(epochs=-1), dict(batch_size=0)):
        with pytest.raises(ValueError):
            TrainConfig(**bad).validate()


def test_train_config_dict_round_trip():
    cfg = TrainConfig(decoder="ut2t", hidden_dim=12, word_dropout=0.25)
    assert TrainConfig.from_dict(cfg.to_dict()) == cfg
    with pytest.raises(ValueError):
        TrainConfig.from_dict({**cfg.to_dict(), "dropout": 2.0})


def test_build_model_kinds(tiny_vocab, tiny_ontology):
    ut2t = build_model(TrainConfig(decoder="ut2t", **SMALL), tiny_vocab)
    assert ut2t.kind == "ut2t"
    ct2t = build_model(TrainConfig(decoder="ct2t", **SMALL), tiny_vocab,
                       tiny_ontology)
    assert ct2t.kind == "ct2t"
    with pytest.raises(ValueError):
        build_model(TrainConfig(decoder="ct2t", **SMALL), tiny_vocab)


def test_build_model_applies_dropout_knobs(tiny_vocab, tiny_ontology):
    cfg = TrainConfig(decoder="ct2t", word_dropout=0.3, name_dropout=0.2,
                      **SMALL)
    model = build_model(cfg, tiny_vocab, tiny_ontology)
    assert model.word_dropout == 0.3
    assert model.name_dropout == 0.2


@pytest.mark.parametrize("decoder", ["ut2t", "ct2t"])
def test_train_is_deterministic(decoder, tiny_examples):
    cfg = TrainConfig(decoder=decoder, seed=3, **SMALL)
    a = train(cfg, tiny_examples, tiny_examples)
    b = train(cfg, tiny_examples, tiny_examples)
    assert sorted(a.params) == sorted(b.params)
    for name in a.params:
        np.testing.assert_array_equal(a.params[name], b.params[name])


def test_train_rejects_empty_sets(tiny_examples):
    cfg = TrainConfig(**SMALL)
    with pytest.raises(ValueError):
        train(cfg, [], tiny_examples)
    with pytest.raises(ValueError):
        train(cfg, tiny_examples, [])


def test_train_logs_every_epoch(tiny_examples):
    seen = []
    cfg = TrainConfig(decoder="ut2t", **SMALL)
    train(cfg, tiny_examples, tiny_examples,
          log_fn=lambda epoch, train_loss, valid_accuracy: seen.append(epoch))
    assert seen == [0, 1]


def test_checkpoint_round_trip(tmp_path, tiny_examples):
    cfg = TrainConfig(decoder="ct2t", **SMALL)
    ckpt = train(cfg, tiny_examples, tiny_examples)
    path = tmp_path / "model.ckpt"
    save_checkpoint(ckpt, path)
    loaded = load_checkpoint(path)
    assert loaded.config == ckpt.config
    assert loaded.vocab.tokens == ckpt.vocab.tokens
    assert loaded.ontology == ckpt.ontology
    assert sorted(loaded.params) == sorted(ckpt.params)
    for name in ckpt.params:
        np.testing.assert_array_equal(loaded.params[name], ckpt.params[name])
        assert loaded.params[name].shape == ckpt.params[name].shape


def test_checkpoint_preserves_scalar_parameter_shape(tmp_path, tiny_vocab,
                                                     tiny_ontology):
    # regression: 0-d parameters (the gate bias) must not come back as (1,)
    cfg = TrainConfig(decoder="ct2t", **SMALL)
    model = build_model(cfg, tiny_vocab, tiny_ontology)
    ckpt = Checkpoint(config=cfg, vocab=tiny_vocab, ontology=tiny_ontology,
                      params=model.store.state_dict())
    assert ckpt.params["gate.b_slot"].shape == ()
    path = tmp_path / "scalar.ckpt"
    save_checkpoint(ckpt, path)
    loaded = load_checkpoint(path)
    assert loaded.params["gate.b_slot"].shape == ()
    # and the loaded dict must be accepted by a fresh model
    model_from_checkpoint(loaded)


def test_load_checkpoint_rejects_bad_files(tmp_path):
    bad_magic = tmp_path / "bad_magic.ckpt"
    bad_magic.write_bytes(b"NOPE" + b"\x00" * 16)
    with pytest.raises(CheckpointError):
        load_checkpoint(bad_magic)

    bad_version = tmp_path / "bad_version.ckpt"
    bad_version.write_bytes(training.CHECKPOINT_MAGIC + b"\x63\x00\x00\x00")
    with pytest.raises(CheckpointError):
        load_checkpoint(bad_version)

    truncated = tmp_path / "truncated.ckpt"
    truncated.write_bytes(training.CHECKPOINT_MAGIC + b"\x01\x00\x00\x00\xff")
    with pytest.raises(CheckpointError):
        load_checkpoint(truncated)


def test_truncated_tensor_data_detected(tmp_path, tiny_examples):
    cfg = TrainConfig(decoder="ut2t", **SMALL)
    ckpt = train(cfg, tiny_examples, tiny_examples)
    path = tmp_path / "model.ckpt"
    save_checkpoint(ckpt, path)
    blob = path.read_bytes()
    path.write_bytes(blob[:-10])
    with pytest.raises(CheckpointError):
        load_checkpoint(path)


def test_model_from_checkpoint_kind_check(tiny_examples):
    cfg = TrainConfig(decoder="ut2t", **SMALL)
    ckpt = train(cfg, tiny_examples, tiny_examples)
    assert model_from_checkpoint(ckpt, expect_kind="ut2t").kind == "ut2t"
    with pytest.raises(CheckpointError):
        model_from_checkpoint(ckpt, expect_kind="ct2t")


def test_fine_tune_zero_epochs_keeps_parameters(tiny_examples):
    cfg = TrainConfig(decoder="ct2t", **SMALL)
    ckpt = train(cfg, tiny_examples, tiny_examples)
    extended = ckpt.ontology.merge(
        Ontology(intents=(("new", "intent"),), slots=(("new", "slot"),)))
    zs = fine_tune(ckpt, tiny_examples, tiny_examples,
                   overrides={"epochs": 0}, ontology=extended)
    assert zs.ontology == extended
    for name in ckpt.params:
        np.testing.assert_array_equal(zs.params[name], ckpt.params[name])
    model = model_from_checkpoint(zs)
    assert model.ontology == extended


def test_fine_tune_updates_parameters(tiny_examples):
    cfg = TrainConfig(decoder="ut2t", **SMALL)
    ckpt = train(cfg, tiny_examples, tiny_examples)
    tuned = fine_tune(ckpt, tiny_examples, tiny_examples,
                      overrides={"epochs": 1, "lr": 0.05})
    changed = any(not np.array_equal(tuned.params[n], ckpt.params[n])
                  for n in ckpt.params)
    assert changed
    assert tuned.vocab.tokens == ckpt.vocab.tokens


def test_fine_tune_rejects_architecture_changes(tiny_examples):
    cfg = TrainConfig(decoder="ut2t", **SMALL)
    ckpt = train(cfg, tiny_examples, tiny_examples)
    for bad in (dict(decoder="ct2t"), dict(hidden_dim=16), dict(embed_dim=16)):
        with pytest.raises(ValueError):
            fine_tune(ckpt, tiny_examples, tiny_examples, overrides=bad)


def test_train_extracts_ontology_for_ct2t(tiny_examples):
    cfg = TrainConfig(decoder="ct2t", **SMALL)
    ckpt = train(cfg, tiny_examples, tiny_examples)
    assert ckpt.ontology == extract_ontology(tiny_examples)
    ut2t = train(TrainConfig(decoder="ut2t", **SMALL), tiny_examples,
                 tiny_examples)
    assert ut2t.ontology is None


def test_best_epoch_selection_keeps_best_validation_params(tiny_examples,
                                                           monkeypatch):
    # force validation accuracy to peak mid-run and confirm the returned
    # parameters come from the peak epoch, not the last one
    cfg = TrainConfig(decoder="ut2t", hidden_dim=8, embed_dim=8, batch_size=2,
                      epochs=3, dropout=0.0)
    accs = iter([0.2, 0.9, 0.4])
    snapshots = []
    real_eval = training.evaluate_model

    def fake_eval(model, examples, max_len):
        report = real_eval(model, examples, max_len)
        report.sentence_accuracy = next(accs)
        snapshots.append(model.store.state_dict())
        return report

    monkeypatch.setattr(training, "evaluate_model", fake_eval)
    ckpt = train(cfg, tiny_examples, tiny_examples)
    for name in ckpt.params:
        np.testing.assert_array_equal(ckpt.params[name], snapshots[1][name])
