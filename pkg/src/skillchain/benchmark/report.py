"""Report files: CSV rows, the full JSON structure and SVG figures."""

from __future__ import annotations

import csv
import json
from pathlib import Path

from .runner import Report

FORMATS = ("csv", "json", "svg")
CSV_FIELDS = ("task", "name", "suite", "variant", "config", "trials", "plan_len", "sr", "ap")


def parse_formats(text: str) -> tuple:
    out = tuple(f.strip().lower() for f in text.split(",") if f.strip())
    bad = [f for f in out if f not in FORMATS]
    if bad or not out:
        raise ValueError(f"formats must be a comma list of {', '.join(FORMATS)}; got {text!r}")
    return out


def emit_report(report: Report, out_dir, formats=FORMATS) -> list:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    if "json" in formats:
        p = out / "report.json"
        p.write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n")
        written.append(p)
    if "csv" in formats:
        p = out / "report.csv"
        with p.open("w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=CSV_FIELDS, extrasaction="ignore", lineterminator="\n")
            w.writeheader()
            w.writerows(report.rows)
        written.append(p)
    if "svg" in formats:
        from ..plotting import ablation_bars, perturbation_bars

        if report.summary:
            written.append(ablation_bars(report.summary, out / "ablation.svg", report.configs()))
        if report.perturbation:
            written.append(perturbation_bars(report.perturbation, out / "perturbation.svg"))
    return written


def load_report(path) -> Report:
    path = Path(path)
    if path.is_dir():
        path = path / "report.json"
    return Report.from_dict(json.loads(path.read_text()))
