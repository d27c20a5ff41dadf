"""Command-line entry point for reproducible runs.

Exit codes: 0 success, 1 usage error, 2 data error (missing or malformed
files, checkpoint mismatches), 3 numeric failure (non-finite loss or a
gradient check above tolerance).

Flags mirror TrainConfig field names one-to-one.  A JSON config file
overrides the built-in defaults and explicit flags override the file, so
every printed resolved config reproduces its run.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import fields

import numpy as np

from . import autodiff as ad
from . import corpus, evaluation, report, training

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3

GRADCHECK_TOLERANCE = 1e-4


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _add_config_flags(sub):
    sub.add_argument("--config", help="JSON file of TrainConfig overrides")
    for f in fields(training.TrainConfig):
        flag = "--" + f.name.replace("_", "-")
        if f.type == "str":
            sub.add_argument(flag, type=str, default=None)
        elif f.type == "int":
            sub.add_argument(flag, type=int, default=None)
        else:
            sub.add_argument(flag, type=float, default=None)


def _resolve_config(args) -> training.TrainConfig:
    values = {}
    if args.config:
        with open(args.config, encoding="utf-8") as fh:
            file_values = json.load(fh)
        unknown = set(file_values) - {f.name for f in fields(training.TrainConfig)}
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        values.update(file_values)
    for f in fields(training.TrainConfig):
        flag_value = getattr(args, f.name, None)
        if flag_value is not None:
            values[f.name] = flag_value
    return training.TrainConfig.from_dict(
        {**training.TrainConfig().to_dict(), **values})


def _print_config(config: training.TrainConfig):
    print("resolved config:", json.dumps(config.to_dict(), sort_keys=True))
    print("seed:", config.seed)


def build_parser() -> _Parser:
    parser = _Parser(prog="t2tslu", description=__doc__,
                     formatter_class=argparse.RawDescriptionHelpFormatter)
    subs = parser.add_subparsers(dest="command", required=True)

    p = subs.add_parser("synth-data", help="generate the synthetic corpus")
    p.add_argument("--count", type=int, default=300)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="dataset JSONL path")
    p.add_argument("--ontology-out", help="also write the extracted ontology")
    p.add_argument("--heldout-values", action="store_true",
                   help="draw slot values from the held-out lexicons")

    p = subs.add_parser("train", help="train a model from scratch")
    p.add_argument("--train", required=True, dest="train_path")
    p.add_argument("--valid", required=True, dest="valid_path")
    p.add_argument("--out", required=True, help="checkpoint output path")
    p.add_argument("--ontology", help="ontology file (ct2t; default: extracted)")
    _add_config_flags(p)

    p = subs.add_parser("eval", help="evaluate a checkpoint on a dataset")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--report-dir", help="write metrics.csv and metrics.png here")

    p = subs.add_parser("predict", help="decode utterances with a checkpoint")
    p.add_argument("--checkpoint", required=True)
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--utterance", help="single space-separated utterance")
    group.add_argument("--data", help="dataset file to decode")

    p = subs.add_parser("adapt", help="Transfer vs From-Scratch domain sweep")
    p.add_argument("--train", required=True, dest="train_path")
    p.add_argument("--valid", required=True, dest="valid_path")
    p.add_argument("--test", required=True, dest="test_path")
    p.add_argument("--held-out", required=True, help="held-out domain name")
    p.add_argument("--fractions", default="0.01,0.05",
                   help="comma-separated data fractions")
    p.add_argument("--seeds", default="0,1,2,3,4", help="comma-separated seeds")
    p.add_argument("--fine-tune-epochs", type=int, default=None)
    p.add_argument("--report-dir",
                   help="write adaptation.csv and adaptation.png here")
    _add_config_flags(p)

    p = subs.add_parser("gradcheck", help="finite-difference gradient check")
    p.add_argument("--decoder", choices=("ut2t", "ct2t"), default="ct2t")
    p.add_argument("--dims", type=int, default=8)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tolerance", type=float, default=GRADCHECK_TOLERANCE)
    return parser


def cmd_synth_data(args) -> int:
    examples, ontology = corpus.synth_corpus(count=args.count, seed=args.seed,
                                             heldout_values=args.heldout_values)
    corpus.save_dataset(examples, args.out)
    print(f"wrote {len(examples)} examples to {args.out} (seed {args.seed})")
    if args.ontology_out:
        corpus.save_ontology(ontology, args.ontology_out)
        print(f"wrote ontology to {args.ontology_out}")
    return EXIT_OK


def cmd_train(args) -> int:
    config = _resolve_config(args)
    _print_config(config)
    train_set = corpus.load_dataset(args.train_path)
    valid_set = corpus.load_dataset(args.valid_path)
    ontology = corpus.load_ontology(args.ontology) if args.ontology else None

    def log_fn(epoch, train_loss, valid_accuracy):
        print(f"epoch {epoch}: train loss {train_loss:.4f}, "
              f"valid sentence accuracy {valid_accuracy:.4f}")

    ckpt = training.train(config, train_set, valid_set, ontology=ontology,
                          log_fn=log_fn)
    training.save_checkpoint(ckpt, args.out)
    print(f"wrote checkpoint to {args.out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    ckpt = training.load_checkpoint(args.checkpoint)
    model = training.model_from_checkpoint(ckpt)
    data = corpus.load_dataset(args.data)
    metrics = evaluation.evaluate_model(model, data, ckpt.config.max_decode_len)
    print(report.format_metrics_table(metrics))
    if args.report_dir:
        csv_path, fig_path = report.write_report(metrics, args.report_dir)
        print(f"wrote {csv_path} and {fig_path}")
    return EXIT_OK


def cmd_predict(args) -> int:
    ckpt = training.load_checkpoint(args.checkpoint)
    model = training.model_from_checkpoint(ckpt)
    if args.utterance:
        inputs = [tuple(args.utterance.split())]
    else:
        inputs = [ex.tokens for ex in corpus.load_dataset(args.data)]
    for tokens in inputs:
        result = model.predict(tokens, max_len=ckpt.config.max_decode_len)
        print(" ".join(result.output_tokens))
    return EXIT_OK


def cmd_adapt(args) -> int:
    config = _resolve_config(args)
    _print_config(config)
    train_set = corpus.load_dataset(args.train_path)
    valid_set = corpus.load_dataset(args.valid_path)
    test_set = corpus.load_dataset(args.test_path)
    fractions = [float(x) for x in args.fractions.split(",") if x]
    seeds = [int(x) for x in args.seeds.split(",") if x]
    result = evaluation.run_adaptation(train_set, valid_set, test_set,
                                       held_out=args.held_out,
                                       fractions=fractions, seeds=seeds,
                                       config=config,
                                       fine_tune_epochs=args.fine_tune_epochs)
    print(report.format_adaptation_table(result))
    if args.report_dir:
        csv_path, fig_path = report.write_adaptation_report(result,
                                                            args.report_dir)
        print(f"wrote {csv_path} and {fig_path}")
    return EXIT_OK


def _tiny_examples():
    """Small fixture corpus for gradient checking: 2 intents, 2 slots."""
    make = corpus.TaggedExample
    return [
        make(tokens=("set", "an", "alarm", "for", "friday"),
             tags=("O", "O", "O", "O", "B-date_time"),
             intent=corpus.normalize_name("set alarm")),
        make(tokens=("cancel", "the", "work", "alarm"),
             tags=("O", "O", "B-alarm_name", "I-alarm_name"),
             intent=corpus.normalize_name("cancel alarm")),
    ]


def cmd_gradcheck(args) -> int:
    examples = _tiny_examples()
    vocab = training.Vocab.build(examples)
    ontology = corpus.extract_ontology(examples)
    config = training.TrainConfig(decoder=args.decoder, hidden_dim=args.dims,
                                  embed_dim=args.dims, seed=args.seed)
    model = training.build_model(config, vocab, ontology, dtype=np.float64)
    checks = [ad.grad_check(lambda ex=ex: model.loss(ex), model.store,
                            seed=args.seed)
              for ex in examples]
    result = max(checks, key=lambda c: c.max_rel_error)
    print(f"decoder {args.decoder}, dims {args.dims}, seed {args.seed}")
    print(f"checked {sum(c.checked_elements for c in checks)} elements, "
          f"max relative error {result.max_rel_error:.3e}")
    for name, idx, analytic, numeric, rel in result.worst:
        print(f"  {name}[{idx}]: analytic {analytic:.6e}, "
              f"numeric {numeric:.6e}, rel {rel:.3e}")
    if result.max_rel_error >= args.tolerance:
        print(f"FAILED: above tolerance {args.tolerance:g}", file=sys.stderr)
        return EXIT_NUMERIC
    print(f"within tolerance {args.tolerance:g}")
    return EXIT_OK


_COMMANDS = {
    "synth-data": cmd_synth_data,
    "train": cmd_train,
    "eval": cmd_eval,
    "predict": cmd_predict,
    "adapt": cmd_adapt,
    "gradcheck": cmd_gradcheck,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return e.code if e.code is not None else EXIT_USAGE
    try:
        return _COMMANDS[args.command](args)
    except (FileNotFoundError, corpus.CorpusError, training.CheckpointError,
            json.JSONDecodeError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except ad.NumericError as e:
        print(f"numeric failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
