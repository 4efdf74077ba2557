import csv
import json
import logging
import os
from typing import Iterable, List, Sequence

from semiclassic_lab.models.report import ConvergenceReport, Outcome, PlotSeries


def _cell(value) -> str:
    # repr keeps every float bit so identical runs give identical files
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_csv(path: str, header: Sequence[str], rows: Iterable[Sequence]) -> str:
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_cell(v) for v in row])
    return path


def write_json(path: str, data) -> str:
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w") as f:
        json.dump(data, f, indent=2, sort_keys=True)
    return path


def convergence_rows(report: ConvergenceReport) -> List[list]:
    rows = sorted(report.rows, key=lambda r: (-r.epsilon, r.t))
    return [[r.epsilon, r.t, r.d_P, ";".join(r.flags)] for r in rows]


def write_plot_series(path: str, series: PlotSeries) -> str:
    return write_csv(path, [series.x_label, series.y_label], zip(series.x, series.y))


def emit_outputs(outcome: Outcome, out_dir: str) -> List[str]:
    """
    Write the tables, ledgers and plot data of one outcome; returns the file
    names written, relative to `out_dir`.
    """
    os.makedirs(out_dir, exist_ok=True)
    written = []

    def record(path):
        written.append(os.path.relpath(path, out_dir))

    if outcome.convergence is not None:
        record(write_csv(os.path.join(out_dir, "convergence.csv"), ["epsilon", "t", "d_P", "flags"],
                         convergence_rows(outcome.convergence)))
    checks = []
    for report in outcome.reports:
        for check in report.checks:
            checks.append([report.name, check.name, check.value, "" if check.bound is None else check.bound,
                           int(check.passed), check.note])
    if checks:
        record(write_csv(os.path.join(out_dir, "checks.csv"), ["report", "check", "value", "bound", "passed", "note"],
                         checks))
    if outcome.bounds is not None:
        record(write_json(os.path.join(out_dir, "bounds.json"), outcome.bounds.dict()))
    for name, audit in sorted(outcome.audits.items()):
        columns = sorted(audit.series)
        rows = [[t] + [audit.series[c][i] for c in columns] for i, t in enumerate(audit.times)]
        record(write_csv(os.path.join(out_dir, f"conservation_{name}.csv"), ["t"] + columns, rows))
    for name, profile in sorted(outcome.tightness.items()):
        rows = zip(profile.radii, profile.x_tail, profile.p_tail, profile.outside)
        record(write_csv(os.path.join(out_dir, f"tightness_{name}.csv"), ["R", "x_tail", "p_tail", "outside"], rows))
    for name, series in sorted(outcome.series.items()):
        record(write_plot_series(os.path.join(out_dir, "plots", f"{name}.csv"), series))
    record(write_json(os.path.join(out_dir, "report.json"), outcome.dict(exclude={"series"})))
    logging.info(f"Wrote {len(written)} output files to {out_dir}")
    return written
