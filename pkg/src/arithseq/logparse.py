"""Training-log parsing: per-epoch metric tables and learning curves.

Reads log files written by the trainer, pulling out the step-loss lines
(step / examples-per-second / words-per-second / loss / learning rate)
and the per-epoch metric records (the __log__: JSON lines).  Metric
values round-trip exactly: the JSON parse returns the same floats the
evaluator reported.  Unparseable lines produce warnings, not errors.
"""

import csv
import json
import os
import re
import sys

from .errors import FileError

STEP_LINE = re.compile(
    r"^\s*(\d+) -\s+([0-9.]+) examples/s -\s+([0-9.]+) words/s - "
    r"ARITHMETIC:\s+(-?[0-9.]+(?:e[+-]?\d+)?|nan|inf) - "
    r"LR: ([0-9.eE+-]+)$")
METRIC_MARK = "__log__:"


def split_log_line(line):
    """Split 'INFO - date - elapsed - body'; returns body or None."""
    parts = line.rstrip("\n").split(" - ", 3)
    if len(parts) != 4 or parts[0] != "INFO":
        return None
    return parts[3]


def parse_log(path, warn=None):
    """Parse one train.log; returns {"steps": [...], "epochs": [...]}.

    Step rows are dicts with step/examples_per_s/words_per_s/loss/lr;
    epoch rows are the metric records as logged (including "epoch").
    warn is called with (path, line_number, reason) for bad lines.
    """
    steps = []
    epochs = []
    try:
        with open(path, "r", encoding="utf-8") as f:
            lines = f.read().splitlines()
    except OSError as e:
        raise FileError("cannot read %s: %s" % (path, e))
    for i, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        body = split_log_line(line)
        if body is None:
            if warn is not None:
                warn(path, i, "not a log line")
            continue
        if body.startswith(METRIC_MARK):
            payload = body[len(METRIC_MARK):]
            try:
                record = json.loads(payload)
            except ValueError:
                if warn is not None:
                    warn(path, i, "bad metric record")
                continue
            if isinstance(record, dict) and "epoch" in record:
                epochs.append(record)
            elif warn is not None:
                warn(path, i, "metric record without epoch")
            continue
        m = STEP_LINE.match(body)
        if m is not None:
            steps.append({
                "step": int(m.group(1)),
                "examples_per_s": float(m.group(2)),
                "words_per_s": float(m.group(3)),
                "loss": float(m.group(4)),
                "lr": float(m.group(5)),
            })
    return {"steps": steps, "epochs": epochs}


def _exp_label(path):
    """Label a log by its experiment directory name."""
    parent = os.path.dirname(os.path.abspath(path))
    return os.path.basename(parent) or path


def _split_metric(name):
    """'valid_arithmetic_acc_10' -> ('valid', 'acc_10'), else None."""
    if "_arithmetic_" not in name:
        return None
    prefix, metric = name.split("_arithmetic_", 1)
    return prefix, metric


def build_table(parsed_logs):
    """Rows (exp, epoch, prefix) x metric columns from parsed logs.

    parsed_logs: list of (label, parse_log result).  Returns (header,
    rows) where each row is a list of strings; absent metrics are empty
    cells.  Values are str(float) so parsing the table recovers the
    exact floats.
    """
    columns = []
    rows_data = []
    for label, parsed in parsed_logs:
        for record in parsed["epochs"]:
            by_prefix = {}
            for name, value in record.items():
                if name == "epoch":
                    continue
                split = _split_metric(name)
                if split is None:
                    continue
                prefix, metric = split
                by_prefix.setdefault(prefix, {})[metric] = value
                if metric not in columns:
                    columns.append(metric)
            for prefix in sorted(by_prefix):
                rows_data.append((label, record["epoch"], prefix,
                                  by_prefix[prefix]))
    header = ["exp", "epoch", "prefix"] + columns
    rows = []
    for label, epoch, prefix, values in rows_data:
        row = [label, str(epoch), prefix]
        for metric in columns:
            value = values.get(metric)
            row.append("" if value is None else repr(value))
        rows.append(row)
    return header, rows


def write_table(header, rows, out):
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)


def write_steps_table(parsed_logs, out):
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(["exp", "step", "examples_per_s", "words_per_s",
                     "loss", "lr"])
    for label, parsed in parsed_logs:
        for s in parsed["steps"]:
            writer.writerow([label, s["step"], repr(s["examples_per_s"]),
                             repr(s["words_per_s"]), repr(s["loss"]),
                             repr(s["lr"])])


def render_curve(parsed_logs, metric, width=72, height=20):
    """Plain-text learning curve of one metric across epochs."""
    series = []
    for label, parsed in parsed_logs:
        points = [(r["epoch"], r[metric]) for r in parsed["epochs"]
                  if metric in r]
        if points:
            series.append((label, points))
    if not series:
        return "no values found for metric %s\n" % metric
    all_values = [v for _, pts in series for _, v in pts]
    all_epochs = [e for _, pts in series for e, _ in pts]
    lo, hi = min(all_values), max(all_values)
    if hi == lo:
        hi = lo + 1.0
    e_lo, e_hi = min(all_epochs), max(all_epochs)
    grid = [[" "] * width for _ in range(height)]
    marks = "ox+*#@%&"
    for k, (label, points) in enumerate(series):
        mark = marks[k % len(marks)]
        for epoch, value in points:
            x = 0 if e_hi == e_lo else \
                int((epoch - e_lo) / (e_hi - e_lo) * (width - 1))
            y = int((value - lo) / (hi - lo) * (height - 1))
            grid[height - 1 - y][x] = mark
    out = ["%s by epoch (%s..%s)" % (metric, e_lo, e_hi)]
    for i, row in enumerate(grid):
        level = hi - (hi - lo) * i / (height - 1)
        out.append("%10.4f |%s" % (level, "".join(row)))
    out.append(" " * 11 + "+" + "-" * width)
    for k, (label, _) in enumerate(series):
        out.append("  %s = %s" % (marks[k % len(marks)], label))
    return "\n".join(out) + "\n"


def parse_many(paths, warn=None):
    """parse_log over files or experiment directories, with labels."""
    parsed = []
    for path in paths:
        if os.path.isdir(path):
            path = os.path.join(path, "train.log")
        parsed.append((_exp_label(path), parse_log(path, warn=warn)))
    return parsed


def default_warn(path, line_number, reason):
    print("warning: %s line %d: %s" % (path, line_number, reason),
          file=sys.stderr)
