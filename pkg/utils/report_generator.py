"""
Report Generator - CSV, JSON and HTML Result Files
==================================================

Writes experiment results. CSV holds one row per run, JSON one object per
(protocol, n) aggregate, HTML a rendered summary of both. CSV and JSON
output is byte-stable for identical results.
"""

import csv
import io
import json
import logging
from datetime import datetime
from typing import Any, Dict, List, Sequence

import markdown

from core.engine import RunMetrics
from core.harness import Aggregate, ExperimentResult
from utils.helpers import ensure_parent_dir

logger = logging.getLogger('PopulationCounting.report')

CSV_FIELDS = ['protocol', 'n', 'seed', 'profile', 'correct', 't_convergence',
              't_stabilization', 'distinct_states', 'error_raised']

JSON_FIELDS = ['protocol', 'n', 'success_rate', 'median_tc', 'p95_tc', 'fitted_c', 'form']


def _csv_value(value: Any) -> Any:
    if value is None:
        return ''
    if isinstance(value, bool):
        return 'true' if value else 'false'
    return value


def run_row(metrics: RunMetrics) -> Dict[str, Any]:
    """CSV row of one run."""
    row = {
        'protocol': metrics.protocol,
        'n': metrics.n,
        'seed': metrics.seed,
        'profile': metrics.profile,
        'correct': metrics.correct,
        't_convergence': metrics.t_convergence,
        't_stabilization': metrics.t_stabilization,
        'distinct_states': metrics.state_usage.distinct_composite_states,
        'error_raised': metrics.error_raised,
    }
    return {key: _csv_value(value) for key, value in row.items()}


def render_csv(runs: Sequence[RunMetrics]) -> str:
    """CSV text with a header row and one row per run."""
    buffer = io.StringIO()
    writer = csv.DictWriter(buffer, fieldnames=CSV_FIELDS, lineterminator="\n")
    writer.writeheader()
    for metrics in runs:
        writer.writerow(run_row(metrics))
    return buffer.getvalue()


def render_json(aggregates: Sequence[Aggregate]) -> str:
    """JSON array of per-n aggregates."""
    return json.dumps([a.to_dict() for a in aggregates], indent=2) + "\n"


class ReportGenerator:
    """Generates result files for one experiment."""

    def __init__(self, title: str = "Population Protocol Experiment"):
        """
        Initialize report generator.

        Args:
            title: Report title
        """
        self.title = title
        self.timestamp = datetime.now()

    def generate_csv(self, result: ExperimentResult, output_path: str) -> None:
        """Write the per-run CSV file."""
        self._write(output_path, render_csv(result.runs))

    def generate_json(self, result: ExperimentResult, output_path: str) -> None:
        """Write the per-n aggregate JSON file."""
        self._write(output_path, render_json(result.aggregates))

    def generate_html(self, result: ExperimentResult, output_path: str) -> None:
        """Write an HTML summary rendered from markdown."""
        body = markdown.markdown(self.build_markdown(result), extensions=['tables'])
        html = f"""<!DOCTYPE html>
<html lang="en">
<head>
    <meta charset="UTF-8">
    <title>{self.title}</title>
    <style>
        body {{ font-family: 'Segoe UI', Tahoma, Geneva, Verdana, sans-serif; padding: 20px; }}
        table {{ border-collapse: collapse; }}
        th, td {{ border: 1px solid #ccc; padding: 4px 10px; text-align: right; }}
        th {{ background: #f0f0f0; }}
    </style>
</head>
<body>
{body}
</body>
</html>
"""
        self._write(output_path, html)

    def build_markdown(self, result: ExperimentResult) -> str:
        """Markdown summary of a result."""
        lines: List[str] = [
            f"# {self.title}",
            "",
            f"Protocol: `{result.protocol}`, generated "
            f"{self.timestamp.strftime('%Y-%m-%d %H:%M:%S')}",
            "",
            "## Aggregates",
            "",
            "| n | runs | success rate | median T_C | p95 T_C | c | form | errors | aborted |",
            "|---|------|--------------|------------|---------|---|------|--------|---------|",
        ]
        for a in result.aggregates:
            lines.append(
                f"| {a.n} | {a.runs} | {a.success_rate:.2f} | {_fmt(a.median_tc)} "
                f"| {_fmt(a.p95_tc)} | {_fmt(a.fitted_c, 3)} | {a.form} "
                f"| {a.errors_raised} | {a.aborted} |")
        if result.fit is not None:
            lines += ["", f"Least-squares fit: T_C = {result.fit.c:.3f} * {result.fit.form} "
                          f"(ratio spread {result.fit.ratio_spread:.2f})"]

        lines += ["", "## Runs", "",
                  "| n | seed | correct | T_C | T_S | interactions | states |",
                  "|---|------|---------|-----|-----|--------------|--------|"]
        for m in result.runs:
            lines.append(
                f"| {m.n} | {m.seed} | {'yes' if m.correct else 'no'} "
                f"| {_fmt(m.t_convergence)} | {_fmt(m.t_stabilization)} "
                f"| {m.interactions} | {m.state_usage.distinct_composite_states} |")
        return "\n".join(lines) + "\n"

    def emit(self, result: ExperimentResult, fmt: str, output_path: str) -> None:
        """
        Write one output format.

        Args:
            result: Experiment result
            fmt: csv, json or html
            output_path: Target file
        """
        writers = {
            'csv': self.generate_csv,
            'json': self.generate_json,
            'html': self.generate_html,
        }
        if fmt not in writers:
            raise ValueError(f"Unknown output format: {fmt}")
        writers[fmt](result, output_path)
        logger.info("Wrote %s results to %s", fmt, output_path)

    @staticmethod
    def _write(output_path: str, content: str) -> None:
        ensure_parent_dir(output_path)
        with open(output_path, 'w', encoding='utf-8', newline='') as f:
            f.write(content)


def _fmt(value: Any, digits: int = 0) -> str:
    if value is None:
        return "-"
    if digits:
        return f"{value:.{digits}f}"
    return f"{value:.0f}" if isinstance(value, float) else str(value)


def emit(result: ExperimentResult, outputs: Sequence[tuple]) -> None:
    """
    Convenience function to write every declared output.

    Args:
        result: Experiment result
        outputs: (format, path) pairs
    """
    generator = ReportGenerator(f"{result.protocol} experiment")
    for fmt, path in outputs:
        generator.emit(result, fmt, path)
