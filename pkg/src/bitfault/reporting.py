"""Trace serialization (CSV rows, JSON summaries) and evolution figures.

CSV columns: iteration, N_flip, D_B, sample_loss, val_top1, val_top5,
chosen_layer, bit_address. Row 0 is the clean state, so chosen_layer and
bit_address are empty there; val_top5 is empty for models under 10 classes
and sample_loss is empty for baseline modes. Floats are written with repr()
and lines end in plain \\n, making same-seed runs byte-identical.
"""

from __future__ import annotations

import csv
import json
import statistics
from dataclasses import asdict
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

TRACE_HEADER = "# bitfault-trace 1"
SUMMARY_FORMAT = "bitfault-summary"
SUMMARY_VERSION = 1
CSV_COLUMNS = (
    "iteration",
    "N_flip",
    "D_B",
    "sample_loss",
    "val_top1",
    "val_top5",
    "chosen_layer",
    "bit_address",
)


class TraceFormatError(ValueError):
    pass


def trace_rows(trace):
    """Trace as a list of per-iteration dicts matching the CSV schema."""
    rows = []
    for k, point in enumerate(trace.points):
        record = trace.records[k - 1] if k else None
        rows.append(
            {
                "iteration": k,
                "N_flip": point.n_flips,
                "D_B": point.hamming,
                "sample_loss": point.sample_loss,
                "val_top1": point.val_top1,
                "val_top5": point.val_top5,
                "chosen_layer": record.layer if record else None,
                "bit_address": ";".join(str(f.address) for f in record.flips) if record else None,
            }
        )
    return rows


def _cell(value):
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_trace_csv(trace, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="ascii", newline="") as fh:
        fh.write(TRACE_HEADER + "\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for row in trace_rows(trace):
            writer.writerow([_cell(row[col]) for col in CSV_COLUMNS])
    return path


def _parse_cell(name, text):
    if text == "":
        return None
    if name in ("iteration", "N_flip", "D_B", "chosen_layer"):
        return int(text)
    if name in ("sample_loss", "val_top1", "val_top5"):
        return float(text)
    return text


def read_trace_csv(path):
    """Rows back from disk, with the same types ``trace_rows`` produces."""
    path = Path(path)
    with open(path, "r", encoding="ascii", newline="") as fh:
        first = fh.readline().rstrip("\n")
        if not first.startswith("# bitfault-trace"):
            raise TraceFormatError(f"{path}: missing trace header line, got {first!r}")
        reader = csv.reader(fh)
        try:
            names = tuple(next(reader))
        except StopIteration:
            raise TraceFormatError(f"{path}: missing column row") from None
        if names != CSV_COLUMNS:
            raise TraceFormatError(f"{path}: unexpected columns {names}")
        rows = []
        for lineno, row in enumerate(reader, start=3):
            if len(row) != len(CSV_COLUMNS):
                raise TraceFormatError(f"{path}:{lineno}: expected {len(CSV_COLUMNS)} fields")
            rows.append({name: _parse_cell(name, cell) for name, cell in zip(CSV_COLUMNS, row)})
    if not rows:
        raise TraceFormatError(f"{path}: no data rows")
    return rows


def flips_to_threshold(rows, threshold):
    """Smallest N_flip whose val_top1 is at or under the threshold, or None."""
    for row in rows:
        if row["val_top1"] <= threshold:
            return row["N_flip"]
    return None


def _trial_entry(seed, rows, threshold, status=None, csv_name=None):
    entry = {
        "seed": seed,
        "clean_top1": rows[0]["val_top1"],
        "final_top1": rows[-1]["val_top1"],
        "n_flips": rows[-1]["N_flip"],
        "hamming": rows[-1]["D_B"],
        "iterations": rows[-1]["iteration"],
    }
    if threshold is not None:
        entry["flips_to_threshold"] = flips_to_threshold(rows, threshold)
    if status is not None:
        entry["status"] = status
    if csv_name is not None:
        entry["trace_csv"] = csv_name
    return entry


def _medians(trials, threshold):
    out = {
        "final_top1": statistics.median(t["final_top1"] for t in trials),
        "n_flips": statistics.median(t["n_flips"] for t in trials),
        "hamming": statistics.median(t["hamming"] for t in trials),
    }
    if threshold is not None:
        reached = [t["flips_to_threshold"] for t in trials if t["flips_to_threshold"] is not None]
        out["flips_to_threshold"] = statistics.median(reached) if reached else None
    return out


def summarize_traces(traces, threshold=None, csv_names=None):
    """Per-trial stats plus medians for a batch of same-config traces."""
    trials = [
        _trial_entry(
            trace.seed,
            trace_rows(trace),
            threshold,
            trace.status,
            csv_names[i] if csv_names else None,
        )
        for i, trace in enumerate(traces)
    ]
    return {"trials": trials, "medians": _medians(trials, threshold)}


def summarize_csvs(paths, threshold=None):
    """Recompute the trial summary straight from trace CSV files."""
    trials = []
    for path in paths:
        rows = read_trace_csv(path)
        trials.append(_trial_entry(None, rows, threshold, csv_name=Path(path).name))
    return {"trials": trials, "medians": _medians(trials, threshold)}


def write_summary_json(summary, kind, config, path, threshold=None):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    doc = {
        "format": SUMMARY_FORMAT,
        "version": SUMMARY_VERSION,
        "kind": kind,
        "threshold": threshold,
        "config": _jsonable(config),
        **summary,
    }
    with open(path, "w", encoding="ascii", newline="") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def _jsonable(config):
    if config is None:
        return None
    if isinstance(config, dict):
        doc = dict(config)
    else:
        doc = asdict(config)
    return {k: list(v) if isinstance(v, tuple) else v for k, v in doc.items()}


# -------------------------------------------------------------------- figures

def _accuracy_axis(ax, rows_list, labels, threshold):
    for rows, label in zip(rows_list, labels):
        x = [r["N_flip"] for r in rows]
        ax.plot(x, [100.0 * r["val_top1"] for r in rows], marker="o", ms=3, label=label)
        if rows[0]["val_top5"] is not None:
            ax.plot(
                x,
                [100.0 * r["val_top5"] for r in rows],
                marker="o",
                ms=3,
                ls="--",
                alpha=0.6,
                label=f"{label} (top-5)" if label else "top-5",
            )
    if threshold is not None:
        ax.axhline(100.0 * threshold, color="k", ls=":", lw=1, label="stop threshold")
    ax.set_ylabel("validation accuracy (%)")
    ax.set_ylim(bottom=0)
    ax.grid(alpha=0.3)
    ax.legend(fontsize=8)


def plot_trace(trace, path, threshold=None):
    """Accuracy and attack-sample loss against committed flips, to PNG."""
    rows = trace_rows(trace)
    fig, (ax_acc, ax_loss) = plt.subplots(2, 1, figsize=(6.0, 6.0), sharex=True)
    _accuracy_axis(ax_acc, [rows], ["top-1"], threshold)
    losses = [(r["N_flip"], r["sample_loss"]) for r in rows if r["sample_loss"] is not None]
    if losses:
        ax_loss.plot(*zip(*losses), marker="o", ms=3, color="tab:red")
    ax_loss.set_ylabel("attack-sample loss")
    ax_loss.set_xlabel("committed bit flips")
    ax_loss.grid(alpha=0.3)
    fig.tight_layout()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def plot_trials(rows_list, path, threshold=None):
    """All trials' accuracy curves on one PNG, plus loss curves when present."""
    fig, (ax_acc, ax_loss) = plt.subplots(2, 1, figsize=(6.0, 6.0), sharex=True)
    labels = [f"trial {i}" for i in range(len(rows_list))]
    _accuracy_axis(ax_acc, rows_list, labels, threshold)
    any_loss = False
    for rows in rows_list:
        losses = [(r["N_flip"], r["sample_loss"]) for r in rows if r["sample_loss"] is not None]
        if losses:
            any_loss = True
            ax_loss.plot(*zip(*losses), marker="o", ms=3, alpha=0.8)
    ax_loss.set_ylabel("attack-sample loss")
    ax_loss.set_xlabel("committed bit flips")
    ax_loss.grid(alpha=0.3)
    if not any_loss:
        ax_loss.set_visible(False)
    fig.tight_layout()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path
