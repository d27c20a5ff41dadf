import json

import pytest

from t2tslu import corpus
from t2tslu.corpus import (CorpusError, Frame, Ontology, TaggedExample, Vocab,
                           build_target_frame, extract_ontology,
                           extract_slot_pairs, load_dataset, load_ontology,
                           normalize_name, project_pairs_to_tags, save_dataset,
                           save_ontology, split_by_domain, subsample,
                           synth_corpus, validate_bio)


def test_normalize_name_collapses_separators():
    assert normalize_name("Date_Time") == ("date", "time")
    assert normalize_name("  set   Alarm ") == ("set", "alarm")
    assert normalize_name("weather") == ("weather",)


def test_validate_bio_accepts_and_rejects():
    tags = ("O", "B-x", "I-x", "O", "B-y")
    assert validate_bio(tags) == tags
    with pytest.raises(CorpusError):
        validate_bio(("O", "I-x"))
    with pytest.raises(CorpusError):
        validate_bio(("B-x", "I-y"))
    with pytest.raises(CorpusError):
        validate_bio(("Q-x",))
    with pytest.raises(CorpusError):
        validate_bio(("B-",))


def test_validate_bio_repairs_orphan_i_tags():
    assert validate_bio(("O", "I-x", "I-x"), repair=True) == ("O", "B-x", "I-x")
    assert validate_bio(("B-x", "I-y"), repair=True) == ("B-x", "B-y")


def test_extract_slot_pairs_maximal_runs():
    tokens = ("set", "the", "gym", "alarm", "for", "next", "monday")
    tags = ("O", "O", "B-alarm_name", "I-alarm_name", "O", "B-date_time",
            "I-date_time")
    assert extract_slot_pairs(tokens, tags) == [
        (("alarm", "name"), ("gym", "alarm")),
        (("date", "time"), ("next", "monday")),
    ]


def test_build_target_frame(tiny_examples):
    frame = build_target_frame(tiny_examples[2])
    assert frame.intent == ("set", "alarm")
    assert frame.slots == ((("alarm", "name"), ("gym", "alarm")),
                           (("date", "time"), ("tonight",)))


def test_project_pairs_to_tags_round_trip(tiny_examples):
    # tag strings come back in normalized (space) form, so compare the
    # extracted pairs rather than raw tag strings
    for ex in tiny_examples:
        pairs = extract_slot_pairs(ex.tokens, ex.tags)
        projected = project_pairs_to_tags(ex.tokens, pairs)
        assert extract_slot_pairs(ex.tokens, projected) == pairs


def test_project_pairs_to_tags_respects_occurrence_order():
    tokens = ("a", "b", "a", "b")
    pairs = [(("x",), ("a", "b")), (("y",), ("a", "b"))]
    assert project_pairs_to_tags(tokens, pairs) == ("B-x", "I-x", "B-y", "I-y")
    with pytest.raises(CorpusError):
        project_pairs_to_tags(("a", "b"), [(("x",), ("c",))])


def test_dataset_round_trip(tmp_path, tiny_examples):
    path = tmp_path / "data.jsonl"
    save_dataset(tiny_examples, path)
    assert load_dataset(path) == tiny_examples


def test_load_dataset_errors(tmp_path):
    bad_json = tmp_path / "bad.jsonl"
    bad_json.write_text("{not json\n")
    with pytest.raises(CorpusError):
        load_dataset(bad_json)

    mismatch = tmp_path / "mismatch.jsonl"
    mismatch.write_text(json.dumps({"tokens": ["a", "b"], "tags": ["O"],
                                    "intent": "x"}) + "\n")
    with pytest.raises(CorpusError):
        load_dataset(mismatch)

    missing = tmp_path / "missing.jsonl"
    missing.write_text(json.dumps({"tokens": ["a"], "tags": ["O"]}) + "\n")
    with pytest.raises(CorpusError):
        load_dataset(missing)

    orphan = tmp_path / "orphan.jsonl"
    orphan.write_text(json.dumps({"tokens": ["a"], "tags": ["I-x"],
                                  "intent": "x"}) + "\n")
    # default mode repairs, strict mode raises
    assert load_dataset(orphan)[0].tags == ("B-x",)
    with pytest.raises(CorpusError):
        load_dataset(orphan, strict_bio=True)


def test_ontology_merge_and_validation():
    a = Ontology(intents=((("set", "alarm")), (("show", "alarms"))),
                 slots=((("date", "time")),))
    b = Ontology(intents=(("set", "alarm"), ("set", "reminder")),
                 slots=(("date", "time"), ("reminder", "todo")))
    merged = a.merge(b)
    assert merged.intents == (("set", "alarm"), ("show", "alarms"),
                              ("set", "reminder"))
    assert merged.slots == (("date", "time"), ("reminder", "todo"))
    with pytest.raises(CorpusError):
        Ontology(intents=(("x",), ("x",)), slots=())
    with pytest.raises(CorpusError):
        Ontology(intents=((),), slots=())


def test_ontology_file_round_trip(tmp_path, tiny_ontology):
    path = tmp_path / "ontology.json"
    save_ontology(tiny_ontology, path)
    assert load_ontology(path) == tiny_ontology
    broken = tmp_path / "broken.json"
    broken.write_text("{")
    with pytest.raises(CorpusError):
        load_ontology(broken)


def test_extract_ontology_sorted_and_deduplicated(tiny_examples):
    ontology = extract_ontology(tiny_examples)
    assert ontology.intents == (("cancel", "alarm"), ("set", "alarm"))
    assert ontology.slots == (("alarm", "name"), ("date", "time"))
    with pytest.raises(CorpusError):
        extract_ontology([])


def test_subsample_stratified_and_seeded():
    examples = [TaggedExample(tokens=("t",), tags=("O",),
                              intent=("a",) if i < 80 else ("b",))
                for i in range(100)]
    sub = subsample(examples, 0.1, seed=3)
    assert len([e for e in sub if e.intent == ("a",)]) == 8
    assert len([e for e in sub if e.intent == ("b",)]) == 2
    assert subsample(examples, 0.1, seed=3) == sub
    assert subsample(examples, 1.0, seed=0) == examples
    with pytest.raises(ValueError):
        subsample(examples, 0.0)


def test_vocab_reserved_ids_and_lookup(tiny_vocab):
    assert tiny_vocab.token(corpus.PAD_ID) == corpus.PAD
    assert tiny_vocab.token(corpus.UNK_ID) == corpus.UNK
    assert tiny_vocab.token(corpus.EOS_ID) == corpus.EOS_TOKEN
    assert tiny_vocab.token(corpus.PAIR_SEP_ID) == corpus.PAIR_SEP
    assert tiny_vocab.token(corpus.VALUE_SEP_ID) == corpus.VALUE_SEP
    assert tiny_vocab.id("never-seen") == corpus.UNK_ID
    assert "alarm" in tiny_vocab
    wid = tiny_vocab.id("alarm")
    assert tiny_vocab.token(wid) == "alarm"
    assert tiny_vocab.ids(["alarm", "zzz"]) == [wid, corpus.UNK_ID]
    with pytest.raises(ValueError):
        Vocab(["alarm"])
    with pytest.raises(ValueError):
        Vocab(list(corpus.RESERVED) + ["a", "a"])


def test_vocab_build_covers_slot_name_words(tiny_examples):
    vocab = Vocab.build(tiny_examples)
    # slot name words appear on the target side even if absent from utterances
    assert "date" in vocab
    assert "name" in vocab


def test_synth_corpus_determinism_and_structure():
    ex1, ont1 = synth_corpus(count=60, seed=5)
    ex2, ont2 = synth_corpus(count=60, seed=5)
    assert ex1 == ex2 and ont1 == ont2
    ex3, _ = synth_corpus(count=60, seed=6)
    assert ex3 != ex1
    domains = split_by_domain(ex1)
    assert set(domains) == {"alarm", "weather", "reminder"}
    for ex in ex1:
        validate_bio(ex.tags)
        assert len(ex.tokens) == len(ex.tags)


def test_synth_corpus_heldout_values_disjoint():
    train, _ = synth_corpus(count=400, seed=0)
    heldout, _ = synth_corpus(count=400, seed=0, heldout_values=True)
    train_values = {v for ex in train
                    for _, v in extract_slot_pairs(ex.tokens, ex.tags)}
    heldout_values = {v for ex in heldout
                      for _, v in extract_slot_pairs(ex.tokens, ex.tags)}
    assert train_values and heldout_values
    assert train_values.isdisjoint(heldout_values)


def test_synth_corpus_spec_validation():
    with pytest.raises(CorpusError):
        synth_corpus(spec={"lexicons": {}, "domains": {"only": [
            {"intent": "x", "template": "hello"}]}})
    with pytest.raises(CorpusError):
        synth_corpus(spec={"lexicons": {}, "domains": {"a": [], "b": [
            {"intent": "x", "template": "hello"}]}})
