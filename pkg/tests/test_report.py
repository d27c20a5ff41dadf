import csv

from t2tslu.evaluation import AdaptationResult, MetricsReport
from t2tslu.report import (ADAPTATION_FIELDS, METRICS_FIELDS,
                           format_adaptation_table, format_metrics_table,
                           write_adaptation_report, write_report)


def sample_metrics():
    return MetricsReport(
        n_examples=4, intent_accuracy=0.75, slot_precision=0.8,
        slot_recall=0.5, slot_f1=0.6153846153846154, sentence_accuracy=0.5,
        parse_error_count=1,
        per_intent={"set alarm": {"support": 3, "correct": 2,
                                  "accuracy": 2 / 3},
                    "show alarms": {"support": 1, "correct": 1,
                                    "accuracy": 1.0}},
        per_slot={"date time": {"tp": 4, "fp": 1, "fn": 4, "support": 8,
                                "precision": 0.8, "recall": 0.5,
                                "f1": 0.6153846153846154}})


def sample_adaptation():
    records = []
    for seed in (0, 1):
        for arm, fraction, acc in (("Transfer", 0.0, 0.2),
                                   ("Transfer", 0.05, 0.6),
                                   ("From-Scratch", 0.05, 0.3)):
            records.append({"arm": arm, "fraction": fraction, "seed": seed,
                            "sentence_accuracy": acc, "intent_accuracy": acc,
                            "slot_f1": acc})
    return AdaptationResult(records=records, zero_shot={0: {}, 1: {}},
                            held_out="reminder",
                            source_domains=["alarm", "weather"])


def test_write_report_creates_csv_and_figure(tmp_path):
    csv_path, fig_path = write_report(sample_metrics(), tmp_path / "out")
    assert csv_path.exists() and fig_path.exists()
    assert fig_path.suffix == ".png"
    assert fig_path.read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"
    with open(csv_path, newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == list(METRICS_FIELDS)
    cells = {(r[0], r[1], r[2]) for r in rows[1:]}
    assert ("overall", "sentence_accuracy", "") in cells
    assert ("intent", "accuracy", "set alarm") in cells
    assert ("slot", "f1", "date time") in cells


def test_write_adaptation_report(tmp_path):
    csv_path, fig_path = write_adaptation_report(sample_adaptation(),
                                                 tmp_path / "out")
    assert csv_path.exists() and fig_path.exists()
    assert fig_path.read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"
    with open(csv_path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert list(rows[0]) == list(ADAPTATION_FIELDS)
    assert len(rows) == 6
    assert {r["arm"] for r in rows} == {"Transfer", "From-Scratch"}


def test_format_metrics_table_lists_every_metric():
    table = format_metrics_table(sample_metrics())
    for needle in ("intent_accuracy", "slot_f1", "sentence_accuracy",
                   "parse_error_count", "set alarm", "date time"):
        assert needle in table


def test_format_adaptation_table_lists_records():
    table = format_adaptation_table(sample_adaptation())
    assert "reminder" in table
    assert "Transfer" in table and "From-Scratch" in table
    assert "alarm, weather" in table
