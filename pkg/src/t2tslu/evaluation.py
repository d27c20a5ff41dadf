"""Metrics and the domain-adaptation experiment driver.

Slot F1 is micro-averaged over (name, value) pair multisets extracted from
the decoded output; a sentence is correct iff the intent matches and the
pair multisets are equal.  Unparseable outputs score as empty predictions
and are counted separately.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field, replace

from .corpus import (build_target_frame, extract_ontology, split_by_domain,
                     subsample)

ZERO_SHOT = 0.0


def f1_score(precision: float, recall: float) -> float:
    if precision + recall == 0:
        return 0.0
    return 2 * precision * recall / (precision + recall)


@dataclass
class MetricsReport:
    n_examples: int
    intent_accuracy: float
    slot_precision: float
    slot_recall: float
    slot_f1: float
    sentence_accuracy: float
    parse_error_count: int
    per_intent: dict = field(default_factory=dict)   # name -> support/correct/accuracy
    per_slot: dict = field(default_factory=dict)     # name -> tp/fp/fn/precision/recall/f1

    def rows(self):
        """One record per metric cell, for delimited output and plotting."""
        out = [("overall", "intent_accuracy", "", self.intent_accuracy),
               ("overall", "slot_precision", "", self.slot_precision),
               ("overall", "slot_recall", "", self.slot_recall),
               ("overall", "slot_f1", "", self.slot_f1),
               ("overall", "sentence_accuracy", "", self.sentence_accuracy),
               ("overall", "parse_error_count", "", self.parse_error_count),
               ("overall", "n_examples", "", self.n_examples)]
        for name, cell in sorted(self.per_intent.items()):
            out.append(("intent", "accuracy", name, cell["accuracy"]))
            out.append(("intent", "support", name, cell["support"]))
        for name, cell in sorted(self.per_slot.items()):
            out.append(("slot", "f1", name, cell["f1"]))
            out.append(("slot", "support", name, cell["support"]))
        return out


def predict_all(model, examples, max_len=60):
    return [model.predict(ex.tokens, max_len=max_len) for ex in examples]


def evaluate_predictions(examples, predictions) -> MetricsReport:
    intent_hits = 0
    sentence_hits = 0
    parse_errors = 0
    tp = fp = fn = 0
    per_intent: dict[str, dict] = {}
    per_slot: dict[str, dict] = {}

    def slot_cell(name):
        return per_slot.setdefault(name, {"tp": 0, "fp": 0, "fn": 0, "support": 0})

    for ex, pred in zip(examples, predictions):
        gold = build_target_frame(ex)
        gold_pairs = Counter(gold.slots)
        if pred.frame is None:
            parse_errors += 1
            pred_pairs = Counter()
            intent_ok = False
        else:
            pred_pairs = Counter(pred.frame.slots)
            intent_ok = pred.frame.intent == gold.intent

        intent_hits += intent_ok
        sentence_hits += intent_ok and pred_pairs == gold_pairs

        matched = gold_pairs & pred_pairs   # multiset intersection: multiplicity-aware
        tp += sum(matched.values())
        fp += sum((pred_pairs - matched).values())
        fn += sum((gold_pairs - matched).values())

        iname = " ".join(gold.intent)
        cell = per_intent.setdefault(iname, {"support": 0, "correct": 0})
        cell["support"] += 1
        cell["correct"] += intent_ok
        for (name, _), k in matched.items():
            slot_cell(" ".join(name))["tp"] += k
        for (name, _), k in (pred_pairs - matched).items():
            slot_cell(" ".join(name))["fp"] += k
        for (name, _), k in (gold_pairs - matched).items():
            slot_cell(" ".join(name))["fn"] += k
        for (name, _), k in gold_pairs.items():
            slot_cell(" ".join(name))["support"] += k

    n = len(examples)
    for cell in per_intent.values():
        cell["accuracy"] = cell["correct"] / cell["support"]
    for cell in per_slot.values():
        p = cell["tp"] / (cell["tp"] + cell["fp"]) if cell["tp"] + cell["fp"] else 0.0
        r = cell["tp"] / (cell["tp"] + cell["fn"]) if cell["tp"] + cell["fn"] else 0.0
        cell["precision"], cell["recall"], cell["f1"] = p, r, f1_score(p, r)

    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    return MetricsReport(n_examples=n,
                         intent_accuracy=intent_hits / n if n else 0.0,
                         slot_precision=precision, slot_recall=recall,
                         slot_f1=f1_score(precision, recall),
                         sentence_accuracy=sentence_hits / n if n else 0.0,
                         parse_error_count=parse_errors,
                         per_intent=per_intent, per_slot=per_slot)


def evaluate_model(model, examples, max_len=60) -> MetricsReport:
    return evaluate_predictions(examples, predict_all(model, examples, max_len))


def value_recall(examples, predictions) -> float:
    """Multiset recall of slot values alone (copy-path diagnostic)."""
    hit = total = 0
    for ex, pred in zip(examples, predictions):
        gold = Counter(v for _, v in build_target_frame(ex).slots)
        predicted = Counter(v for _, v in pred.frame.slots) if pred.frame else Counter()
        hit += sum((gold & predicted).values())
        total += sum(gold.values())
    return hit / total if total else 0.0


def zero_shot_breakdown(model, examples, max_len=60) -> dict:
    """Per-intent accuracy and per-slot F1 tables; no-support labels omitted."""
    report = evaluate_model(model, examples, max_len)
    return {
        "intents": {k: v for k, v in report.per_intent.items() if v["support"] > 0},
        "slots": {k: v for k, v in report.per_slot.items()
                  if v["tp"] + v["fp"] + v["fn"] > 0},
    }


@dataclass
class AdaptationResult:
    records: list                  # dicts: arm, fraction, seed, metrics
    zero_shot: dict                # seed -> breakdown tables
    held_out: str
    source_domains: list


def run_adaptation(train_set, valid_set, test_set, held_out: str, fractions,
                   seeds, config, fine_tune_epochs=None) -> AdaptationResult:
    """Transfer vs From-Scratch sweep over data fractions of a held-out domain.

    Per seed: train once on the source domains, then fine-tune on x% of the
    held-out domain's training data (Transfer) or train a fresh model on the
    same x% (From-Scratch); fraction 0 is the zero-shot / untrained row.
    """
    from . import training  # deferred: training depends on this module

    train_dom = split_by_domain(train_set)
    valid_dom = split_by_domain(valid_set)
    test_dom = split_by_domain(test_set)
    if held_out not in train_dom or held_out not in test_dom:
        raise ValueError(f"held-out domain {held_out!r} missing from the data")
    source_domains = sorted(d for d in train_dom if d != held_out)
    if not source_domains:
        raise ValueError("no source domains left after holding out "
                         f"{held_out!r}")
    if any(f < 0 or f > 1 for f in fractions):
        raise ValueError("fractions must lie in [0, 1]")

    src_train = [ex for d in source_domains for ex in train_dom[d]]
    src_valid = [ex for d in source_domains for ex in valid_dom.get(d, [])]
    tgt_train = train_dom[held_out]
    tgt_valid = valid_dom.get(held_out, tgt_train)
    tgt_test = test_dom[held_out]
    target_ontology = extract_ontology(tgt_train + tgt_test)

    ft_epochs = fine_tune_epochs if fine_tune_epochs is not None else config.epochs
    records = []
    zero_shot_tables = {}

    def record(arm, fraction, seed, report):
        records.append({"arm": arm, "fraction": fraction, "seed": seed,
                        "sentence_accuracy": report.sentence_accuracy,
                        "intent_accuracy": report.intent_accuracy,
                        "slot_f1": report.slot_f1})

    for seed in seeds:
        cfg = replace(config, seed=seed)
        src_ckpt = training.train(cfg, src_train, src_valid or src_train)
        merged = (src_ckpt.ontology.merge(target_ontology)
                  if src_ckpt.ontology is not None else None)

        zs_ckpt = training.fine_tune(src_ckpt, tgt_train, tgt_valid,
                                     overrides={"epochs": 0}, ontology=merged)
        zs_model = training.model_from_checkpoint(zs_ckpt)
        record("Transfer", ZERO_SHOT, seed,
               evaluate_model(zs_model, tgt_test, cfg.max_decode_len))
        zero_shot_tables[seed] = zero_shot_breakdown(zs_model, tgt_test,
                                                     cfg.max_decode_len)

        for fraction in fractions:
            if fraction == 0.0:
                # untrained sanity floor: fresh random parameters, no updates
                scratch_cfg = replace(cfg, epochs=ft_epochs)
                model = training.build_model(scratch_cfg,
                                             training.Vocab.build(tgt_train),
                                             ontology=merged)
                record("From-Scratch", fraction, seed,
                       evaluate_model(model, tgt_test, cfg.max_decode_len))
                continue
            sub = subsample(tgt_train, fraction, seed)
            ft = training.fine_tune(src_ckpt, sub, tgt_valid,
                                    overrides={"epochs": ft_epochs, "seed": seed},
                                    ontology=merged)
            record("Transfer", fraction, seed,
                   evaluate_model(training.model_from_checkpoint(ft),
                                  tgt_test, cfg.max_decode_len))
            scratch_cfg = replace(cfg, epochs=ft_epochs, seed=seed)
            scratch = training.train(scratch_cfg, sub, tgt_valid, ontology=merged)
            record("From-Scratch", fraction, seed,
                   evaluate_model(training.model_from_checkpoint(scratch),
                                  tgt_test, cfg.max_decode_len))

    return AdaptationResult(records=records, zero_shot=zero_shot_tables,
                            held_out=held_out, source_domains=source_domains)
