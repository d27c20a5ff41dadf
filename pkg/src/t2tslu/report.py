"""Report rendering: delimited metric records, text tables and figures.

Every metric cell becomes one CSV record so downstream plotting never has
to re-parse the human-readable tables; figures are rendered with the Agg
backend straight to files next to the CSV output.
"""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

from .evaluation import AdaptationResult, MetricsReport  # noqa: E402

METRICS_FIELDS = ("scope", "metric", "label", "value")
ADAPTATION_FIELDS = ("arm", "fraction", "seed",
                     "sentence_accuracy", "intent_accuracy", "slot_f1")


def write_metrics_csv(report: MetricsReport, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(METRICS_FIELDS)
        writer.writerows(report.rows())


def write_adaptation_csv(result: AdaptationResult, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=ADAPTATION_FIELDS)
        writer.writeheader()
        writer.writerows(result.records)


def format_metrics_table(report: MetricsReport) -> str:
    lines = [f"{'metric':<24}{'value':>10}"]
    lines.append("-" * 34)
    lines.append(f"{'n_examples':<24}{report.n_examples:>10d}")
    for name in ("intent_accuracy", "slot_precision", "slot_recall",
                 "slot_f1", "sentence_accuracy"):
        lines.append(f"{name:<24}{getattr(report, name):>10.4f}")
    lines.append(f"{'parse_error_count':<24}{report.parse_error_count:>10d}")
    if report.per_intent:
        lines.append("")
        lines.append(f"{'intent':<28}{'support':>8}{'accuracy':>10}")
        for name, cell in sorted(report.per_intent.items()):
            lines.append(f"{name:<28}{cell['support']:>8d}{cell['accuracy']:>10.4f}")
    if report.per_slot:
        lines.append("")
        lines.append(f"{'slot':<28}{'support':>8}{'f1':>10}")
        for name, cell in sorted(report.per_slot.items()):
            lines.append(f"{name:<28}{cell['support']:>8d}{cell['f1']:>10.4f}")
    return "\n".join(lines)


def format_adaptation_table(result: AdaptationResult) -> str:
    lines = [f"held-out domain: {result.held_out} "
             f"(sources: {', '.join(result.source_domains)})"]
    lines.append(f"{'arm':<14}{'fraction':>9}{'seed':>6}"
                 f"{'sentence':>10}{'intent':>8}{'slot_f1':>9}")
    lines.append("-" * 56)
    for r in result.records:
        lines.append(f"{r['arm']:<14}{r['fraction']:>9.3f}{r['seed']:>6d}"
                     f"{r['sentence_accuracy']:>10.4f}"
                     f"{r['intent_accuracy']:>8.4f}{r['slot_f1']:>9.4f}")
    return "\n".join(lines)


def render_metrics_figure(report: MetricsReport, path):
    """Per-intent accuracy and per-slot F1 as side-by-side bar panels."""
    fig, (ax_i, ax_s) = plt.subplots(1, 2, figsize=(10, 4))
    intents = sorted(report.per_intent)
    ax_i.bar(range(len(intents)),
             [report.per_intent[k]["accuracy"] for k in intents],
             color="tab:blue")
    ax_i.set_xticks(range(len(intents)))
    ax_i.set_xticklabels(intents, rotation=45, ha="right", fontsize=8)
    ax_i.set_ylim(0, 1.05)
    ax_i.set_ylabel("accuracy")
    ax_i.set_title("per-intent accuracy")
    slots = sorted(report.per_slot)
    ax_s.bar(range(len(slots)),
             [report.per_slot[k]["f1"] for k in slots], color="tab:orange")
    ax_s.set_xticks(range(len(slots)))
    ax_s.set_xticklabels(slots, rotation=45, ha="right", fontsize=8)
    ax_s.set_ylim(0, 1.05)
    ax_s.set_ylabel("F1")
    ax_s.set_title("per-slot F1")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def render_adaptation_figure(result: AdaptationResult, path):
    """Mean sentence accuracy (with per-seed points) per arm over fractions."""
    fig, ax = plt.subplots(figsize=(6, 4))
    for arm, color in (("Transfer", "tab:blue"), ("From-Scratch", "tab:orange")):
        per_fraction: dict[float, list[float]] = {}
        for r in result.records:
            if r["arm"] == arm:
                per_fraction.setdefault(r["fraction"], []).append(
                    r["sentence_accuracy"])
        xs = sorted(per_fraction)
        means = [sum(per_fraction[x]) / len(per_fraction[x]) for x in xs]
        ax.plot(xs, means, marker="o", color=color, label=arm)
        for x in xs:
            ax.scatter([x] * len(per_fraction[x]), per_fraction[x],
                       color=color, alpha=0.35, s=12)
    ax.set_xlabel("fraction of held-out training data")
    ax.set_ylabel("sentence accuracy")
    ax.set_title(f"adaptation to held-out domain: {result.held_out}")
    ax.set_ylim(-0.02, 1.02)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def write_report(report: MetricsReport, out_dir, stem="metrics"):
    """CSV records plus the rendered figure; returns the written paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    csv_path = out / f"{stem}.csv"
    fig_path = out / f"{stem}.png"
    write_metrics_csv(report, csv_path)
    render_metrics_figure(report, fig_path)
    return csv_path, fig_path


def write_adaptation_report(result: AdaptationResult, out_dir, stem="adaptation"):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    csv_path = out / f"{stem}.csv"
    fig_path = out / f"{stem}.png"
    write_adaptation_csv(result, csv_path)
    render_adaptation_figure(result, fig_path)
    return csv_path, fig_path
